"""Termination analysis for affine probabilistic programs via lexicographic
ranking supermartingales."""

__version__ = "0.1.0"

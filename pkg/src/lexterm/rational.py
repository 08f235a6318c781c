"""Exact rational numbers used everywhere in the package.

``gmpy2.mpq`` is an arbitrary precision rational that is several times faster
than :class:`fractions.Fraction`, which matters inside the simplex loop.
"""

from __future__ import annotations

import re
from fractions import Fraction

from gmpy2 import mpq

Q = mpq
ZERO = mpq(0)
ONE = mpq(1)

_DECIMAL = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_FRACTION = re.compile(r"^[+-]?\d+\s*/\s*[+-]?\d+$")


def to_q(value) -> mpq:
    """Convert an int, Fraction, mpq or numeric string to ``mpq`` without rounding.

    Floats are rejected on purpose: a float has already lost the exact value.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, (int, type(ZERO))):
        return mpq(value)
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    if isinstance(value, str):
        text = value.strip()
        if _FRACTION.match(text):
            num, den = text.split("/")
            if int(den) == 0:
                raise ValueError(f"zero denominator in {value!r}")
            return mpq(int(num), int(den))
        if _DECIMAL.match(text):
            return mpq(Fraction(text).numerator, Fraction(text).denominator)
        raise ValueError(f"not a rational literal: {value!r}")
    if hasattr(value, "numerator") and hasattr(value, "denominator"):
        return mpq(int(value.numerator), int(value.denominator))
    raise TypeError(f"cannot convert {type(value).__name__} to an exact rational")


def q_str(value: mpq) -> str:
    """Render a rational as ``n`` or ``n/d``."""
    value = mpq(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def to_fraction(value: mpq) -> Fraction:
    return Fraction(int(value.numerator), int(value.denominator))

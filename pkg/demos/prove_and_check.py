"""Prove a two-phase program terminates, then try to break the certificate.

The first loop doubles x until a coin stops it; the second counts x down.
One linear ranking function cannot cover both, so the prover returns a
two-component lexicographic map.  We then re-check the shipped certificate
with a larger margin and with a tampered expression.
"""

import json
from pathlib import Path

from lexterm.frontend import parse_program
from lexterm.invariants import load_annotations
from lexterm.lexrsm import load_certificate, synthesize, verify_symbolically
from lexterm.pcfg import build_pcfg, normalize_guards

CORPUS = Path(__file__).resolve().parent.parent / "corpus"

ast = parse_program((CORPUS / "double_then_countdown.app").read_text())
g = normalize_guards(build_pcfg(ast))
inv = load_annotations(ast, g)

m = synthesize(g, inv)
print(f"synthesized a map of dimension {m.dimension}")
for lid in sorted(m.components[0]):
    row = ", ".join(m.at(j, lid).format(g.variables) for j in range(m.dimension))
    print(f"  l{lid}: ({row})")

doc = json.loads((CORPUS / "double_then_countdown.cert.json").read_text())
cert, cert_inv = load_certificate(doc, ast, g)
print("shipped certificate verifies:", verify_symbolically(g, cert_inv, cert).ok)

strict = verify_symbolically(g, cert_inv, cert, epsilon=2)
print(f"with margin 2: {len(strict.failures)} failed obligations, first at l{strict.failures[0].location}")

doc["components"][0]["l4"] = "6*c + 1"
bad, bad_inv = load_certificate(doc, ast, g)
failure = verify_symbolically(g, bad_inv, bad).failures[0]
print(f"tampered certificate: {failure.clause} at l{failure.location}")

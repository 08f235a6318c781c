"""Certify nested loops one at a time, innermost first.

Each loop gets its own small supermartingale that only has to rank the
loop's own locations and stay unaffected inside the loops it contains.
"""

from pathlib import Path

from lexterm.compositional import pointwise_ncsm, prove_compositional, verify_ncsm
from lexterm.frontend import parse_program
from lexterm.invariants import load_annotations
from lexterm.pcfg import build_pcfg, normalize_guards

CORPUS = Path(__file__).resolve().parent.parent / "corpus"

for name in ("reset_or_double", "triple_nested"):
    ast = parse_program((CORPUS / f"{name}.app").read_text())
    g = normalize_guards(build_pcfg(ast))
    inv = load_annotations(ast, g)
    result = prove_compositional(g, inv)
    print(f"{name}: proved={result.proved} in {result.seconds:.3f}s")
    for cert in result.certificates:
        head = cert.map.at(0, cert.head).format(g.variables)
        sym = verify_ncsm(g, inv, cert).ok
        pts = pointwise_ncsm(g, inv, cert, per_transition=200)
        print(f"  loop at l{cert.head} (depth {cert.depth}): {head}  symbolic={sym} sampled={pts.checked} clean={pts.ok}")

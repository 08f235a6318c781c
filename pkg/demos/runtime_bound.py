"""Compare a certified expected-runtime bound with simulation."""

from pathlib import Path

from lexterm.bounds import bound_value, synthesize_eci
from lexterm.frontend import parse_program
from lexterm.invariants import load_annotations
from lexterm.lexrsm import synthesize
from lexterm.pcfg import build_pcfg, normalize_guards
from lexterm.sim import estimate

CORPUS = Path(__file__).resolve().parent.parent / "corpus"

for name, start in (("biased_walk", {}), ("two_loops", {"x": 5, "y": 7}), ("double_then_countdown", {})):
    ast = parse_program((CORPUS / f"{name}.app").read_text())
    g = normalize_guards(build_pcfg(ast))
    inv = load_annotations(ast, g)
    cert = synthesize_eci(g, inv, synthesize(g, inv))
    if not hasattr(cert, "expression"):
        print(f"{name}: no bound ({cert.reason}; component {cert.component})")
        continue
    est = estimate(g, start, trials=20000, seed=1)
    print(
        f"{name}: bound {cert.expression.format(g.variables)} = {bound_value(cert, start, g)} "
        f"vs simulated {est.mean_steps:.2f} ± {est.steps_half_width:.2f} steps"
    )

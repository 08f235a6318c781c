"""Time the prover on generated programs of growing size.

Usage: python demos/scaling.py [max_n]   (default 6; 8 takes about half a minute)
"""

import sys
import time

from lexterm.cli import GeneratorSpec, generate_program
from lexterm.frontend import parse_program
from lexterm.invariants import load_annotations
from lexterm.lexrsm import synthesize
from lexterm.pcfg import build_pcfg, normalize_guards

top = int(sys.argv[1]) if len(sys.argv) > 1 else 6
print(f"{'n':>2} {'lines':>6} {'dim':>4} {'seconds':>8}")
for n in range(2, top + 1):
    text = generate_program(GeneratorSpec(n, seed=0, nondet=True))
    t0 = time.perf_counter()
    ast = parse_program(text)
    g = normalize_guards(build_pcfg(ast))
    m = synthesize(g, load_annotations(ast, g))
    print(f"{n:>2} {text.count(chr(10)):>6} {m.dimension:>4} {time.perf_counter() - t0:>8.2f}")

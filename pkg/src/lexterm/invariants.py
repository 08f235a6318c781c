"""Supporting invariants: a forward constraint-propagation generator, user
annotations, ``.inv`` sidecar files and an empirical soundness check.

The abstract domain is a conjunction of linear constraints.  Guards are
conjoined, invertible affine updates are applied by exact substitution and
every other update introduces the relation between the old and new value and
projects the old value away (Fourier-Motzkin).  Joins keep the constraints of
each side that the other side entails, plus the hull of single-variable
bounds.  Loop heads are widened after a fixed number of changes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import reduce
from math import gcd
from typing import Optional

from .frontend import DistSpec, Interval, ParseError, Program, parse_assertion
from .linear import FALSE, TRUE, LinConstraint, LinExpr, Polyhedron
from .lp import maximize_over, polyhedron_feasible
from .pcfg import Pcfg
from .rational import Q, ZERO

WIDEN_DELAY = 3
NARROW_PASSES = 3


@dataclass
class InvariantMap:
    """Per-location polyhedra with a provenance tag per location."""

    polys: dict
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, lid: int) -> Polyhedron:
        return self.polys[lid]

    def lookup(self, lid: int) -> Polyhedron:
        return self.polys[lid]

    def items(self):
        return sorted(self.polys.items())

    def reachable(self, lid: int) -> bool:
        return not self.polys[lid].is_trivially_false()

    def dump(self, order=None) -> str:
        return "\n".join(
            f"loc {lid}: {poly.format(order) if not poly.is_trivially_false() else 'false'}"
            f"  # {self.provenance.get(lid, 'default')}"
            for lid, poly in self.items()
        )


# ---------------------------------------------------------------------------
# constraint normalisation and cheap reasoning


def _normalize(c: LinConstraint) -> LinConstraint:
    """Weak constraint with integer coprime variable coefficients."""
    e = c.expr
    if e.is_constant():
        return LinConstraint(e, False)
    dens = reduce(lambda a, b: a * b // gcd(a, b), (int(v.denominator) for v in e.coeffs.values()), 1)
    nums = [int(v * dens) for v in e.coeffs.values()]
    g = reduce(gcd, (abs(n) for n in nums))
    scale = Q(dens, g)
    return LinConstraint(e * scale, False)


def _bound_of(c: LinConstraint):
    """For a single-variable constraint ``a*v + b <= 0`` return (v, 'lo'|'hi', value)."""
    e = c.expr
    if len(e.coeffs) != 1:
        return None
    (v, a), = e.coeffs.items()
    value = -e.const / a
    return (v, "hi" if a > 0 else "lo", value)


def _bounds(constraints) -> dict:
    out: dict = {}
    for c in constraints:
        b = _bound_of(c)
        if b is None:
            continue
        v, side, value = b
        lo, hi = out.get(v, (None, None))
        if side == "lo":
            lo = value if lo is None else max(lo, value)
        else:
            hi = value if hi is None else min(hi, value)
        out[v] = (lo, hi)
    return out


def _bound_constraints(v, lo, hi) -> list:
    out = []
    if lo is not None:
        out.append(LinConstraint.ge(LinExpr.var(v), LinExpr.constant(lo)))
    if hi is not None:
        out.append(LinConstraint.le(LinExpr.var(v), LinExpr.constant(hi)))
    return out


def _tidy(constraints) -> Optional[tuple]:
    """Normalise, keep the tightest bound per direction, drop duplicates.

    Returns None when a constant constraint is false.
    """
    best: dict = {}
    order: list = []
    for c in constraints:
        c = _normalize(c)
        if c.expr.is_constant():
            if c.expr.const > 0:
                return None
            continue
        key = c.expr.linear_part()
        if key not in best:
            order.append(key)
            best[key] = c
        elif c.expr.const > best[key].expr.const:
            best[key] = c
    # opposite pairs that contradict
    out = []
    for key in order:
        c = best[key]
        neg = -key
        if neg in best and c.expr.const + best[neg].expr.const > 0:
            return None
        out.append(c)
    return tuple(out)


def _entails(state: tuple, c: LinConstraint) -> bool:
    c = _normalize(c)
    if c.expr.is_constant():
        return c.expr.const <= 0
    key = c.expr.linear_part()
    for d in state:
        if d.expr.linear_part() == key and d.expr.const >= c.expr.const:
            return True
    b = _bound_of(c)
    if b is not None:
        bounds = _bounds(state)
        v, side, value = b
        lo, hi = bounds.get(v, (None, None))
        if side == "lo" and lo is not None and lo >= value:
            return True
        if side == "hi" and hi is not None and hi <= value:
            return True
        if not any(v in d.expr.coeffs and len(d.expr.coeffs) > 1 for d in state):
            return False
    if not any(set(d.expr.coeffs) & set(c.expr.coeffs) for d in state):
        return False
    top = maximize_over(Polyhedron(state), c.expr)
    if top is False:
        return True
    return top is not None and top <= 0


def _eliminate(constraints: list, v) -> list:
    """Project ``v`` away (Fourier-Motzkin, equality substitution first)."""
    with_v = [c for c in constraints if v in c.expr.coeffs]
    rest = [c for c in constraints if v not in c.expr.coeffs]
    if not with_v:
        return rest
    lin = {}
    for c in with_v:
        lin.setdefault(c.expr.linear_part(), c)
    for c in with_v:
        opp = lin.get(-c.expr.linear_part())
        if opp is not None and opp.expr.const == -c.expr.const:
            # c.expr == 0 is an equality; solve it for v
            a = c.expr.coeffs[v]
            solved = (LinExpr.var(v) * a - c.expr) / a
            return rest + [
                LinConstraint(d.expr.substitute(v, solved), False) for d in with_v if d is not c and d is not opp
            ]
    pos = [c for c in with_v if c.expr.coeffs[v] > 0]
    neg = [c for c in with_v if c.expr.coeffs[v] < 0]
    out = list(rest)
    for p in pos:
        for n in neg:
            a, b = p.expr.coeffs[v], -n.expr.coeffs[v]
            out.append(LinConstraint(p.expr * b + n.expr * a, False))
    return out


# ---------------------------------------------------------------------------
# transfer functions


def _guard_transfer(state: tuple, guard: Polyhedron) -> Optional[tuple]:
    out = _tidy(state + tuple(c.weakened() for c in guard.constraints))
    if out is None:
        return None
    if guard.constraints and not polyhedron_feasible(Polyhedron(out)):
        return None
    return out


def _update_transfer(state: tuple, update) -> Optional[tuple]:
    v, e, noise = update.var, update.expr, update.noise
    a = e.coeff(v)
    if noise is None and a != 0:
        # invertible: new v = a*old + rest, so old = (v - rest) / a
        rest = e - LinExpr.var(v) * a
        back = (LinExpr.var(v) - rest) / a
        return _tidy([LinConstraint(c.expr.substitute(v, back), False) for c in state])
    old = (v, "old")
    renamed = [LinConstraint(c.expr.rename({v: old}), False) for c in state]
    rhs = e.rename({v: old})
    diff = LinExpr.var(v) - rhs
    if noise is None:
        lo = hi = ZERO
    else:
        lo, hi = noise.lo, noise.hi
    if lo is not None:
        renamed.append(LinConstraint(LinExpr.constant(lo) - diff, False))
    if hi is not None:
        renamed.append(LinConstraint(diff - LinExpr.constant(hi), False))
    return _tidy(_eliminate(renamed, old))


def _transfer(state: tuple, t) -> Optional[tuple]:
    if t.update is not None:
        return _update_transfer(state, t.update)
    guard = t.guard if isinstance(t.guard, Polyhedron) else TRUE
    return _guard_transfer(state, guard)


def _join(a: Optional[tuple], b: Optional[tuple]) -> Optional[tuple]:
    if a is None:
        return b
    if b is None:
        return a
    if a == b:
        return a
    keep = [c for c in a if _entails(b, c)]
    keep += [c for c in b if _entails(a, c)]
    ba, bb = _bounds(a), _bounds(b)
    for v in set(ba) & set(bb):
        la, ha = ba[v]
        lb, hb = bb[v]
        lo = min(la, lb) if la is not None and lb is not None else None
        hi = max(ha, hb) if ha is not None and hb is not None else None
        keep += _bound_constraints(v, lo, hi)
    return _tidy(keep)


def _widen(old: tuple, new: tuple, generous: bool = True) -> tuple:
    """Constraints of ``old`` still valid.

    While ``generous``, also keep constraints of ``new`` in directions that
    ``old`` does not mention but implies; these never repeat a direction, so
    the sequence still stabilises.
    """
    keep = [c for c in old if _entails(new, c)]
    if generous:
        seen = {c.expr.linear_part() for c in old}
        keep += [c for c in new if c.expr.linear_part() not in seen and _entails(old, c)]
    return _tidy(keep)


def _meet(state: Optional[tuple], poly: Optional[Polyhedron]) -> Optional[tuple]:
    if state is None or poly is None:
        return state
    return _guard_transfer(state, poly)


def propagate(g: Pcfg, head_assumptions: Optional[dict] = None) -> dict:
    """Fixpoint of the forward transfer; ``None`` marks unreachable locations.

    ``head_assumptions`` maps loop-head locations to polyhedra that are
    conjoined whenever the head's state changes (user annotations).
    """
    head_assumptions = head_assumptions or {}
    heads = {info.head for info in g.loops}
    init_state = _tidy([c.weakened() for c in g.init_poly.constraints])
    state: dict = {loc.lid: None for loc in g.locations}
    state[g.init] = _meet(init_state, head_assumptions.get(g.init))
    changes = {lid: 0 for lid in state}
    incoming: dict = {lid: [] for lid in state}
    for t in g.transitions:
        incoming[t.dst].append(t)
    work = [g.init]
    queued = {g.init}
    while work:
        work.sort(reverse=True)
        lid = work.pop()
        queued.discard(lid)
        here = state[lid]
        if here is None:
            continue
        for t in g.outgoing(lid):
            if t.dst == lid and lid == g.term:
                continue
            out = _transfer(here, t)
            if out is None:
                continue
            dst = t.dst
            cur = state[dst]
            merged = _join(cur, out)
            merged = _meet(merged, head_assumptions.get(dst))
            if merged == cur:
                continue
            if cur is not None and dst in heads:
                changes[dst] += 1
                if changes[dst] > WIDEN_DELAY:
                    generous = changes[dst] <= 2 * WIDEN_DELAY
                    merged = _meet(_widen(cur, merged, generous), head_assumptions.get(dst))
                    if merged == cur:
                        continue
            state[dst] = merged
            if dst not in queued:
                work.append(dst)
                queued.add(dst)
    return _narrow(g, state, incoming, init_state, head_assumptions)


def _narrow(g: Pcfg, state: dict, incoming: dict, init_state, assumptions: dict, passes: int = NARROW_PASSES) -> dict:
    """Descending passes: recompute each location from its predecessors.

    Every state is already an over-approximation, so recomputing from sound
    predecessor states stays sound and can only recover precision lost to
    widening.
    """
    for _ in range(passes):
        changed = False
        for loc in g.locations:
            lid = loc.lid
            if state[lid] is None:
                continue
            acc = init_state if lid == g.init else None
            for t in incoming[lid]:
                src = state[t.src]
                if src is None or (t.src == lid == g.term):
                    continue
                out = _transfer(src, t)
                if out is not None:
                    acc = _join(acc, out)
            acc = _meet(acc, assumptions.get(lid))
            if acc is None:
                acc = state[lid] if lid == g.term and not incoming[lid] else None
            if acc != state[lid]:
                state[lid] = acc
                changed = True
        if not changed:
            break
    return state


def default_invariants(g: Pcfg) -> InvariantMap:
    states = propagate(g)
    return _to_map(states, {lid: "default" for lid in states})


def _to_map(states: dict, provenance: dict) -> InvariantMap:
    polys = {}
    for lid, s in states.items():
        polys[lid] = FALSE if s is None else Polyhedron(s)
    return InvariantMap(polys, provenance)


def annotation_heads(g: Pcfg) -> dict:
    return {info.head: info.annotation for info in g.loops if info.annotation is not None}


def load_annotations(ast: Program, g: Pcfg, sidecar: Optional[str] = None) -> InvariantMap:
    """Default map strengthened by ``@invariant`` annotations, then sidecar overrides."""
    declared = set(g.variables)
    assumptions = annotation_heads(g)
    for head, poly in assumptions.items():
        unknown = poly.variables() - declared
        if unknown:
            raise ValueError(f"annotation at l{head} mentions unknown variable(s) {sorted(unknown)}")
    states = propagate(g, assumptions)
    provenance = {lid: "default" for lid in states}
    for head in assumptions:
        provenance[head] = "annotation"
    inv = _to_map(states, provenance)
    if sidecar is not None:
        for lid, poly in parse_sidecar(sidecar, g).items():
            inv.polys[lid] = poly
            inv.provenance[lid] = "sidecar"
    return inv


_SIDE_LINE = re.compile(r"^\s*loc\s+l?(\d+)\s*:\s*(.+?)\s*$")


def parse_sidecar(text: str, g: Pcfg) -> dict:
    """Parse ``loc <id>: <assertion>`` lines; ``#`` starts a comment."""
    out = {}
    declared = set(g.variables)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SIDE_LINE.match(line)
        if not m:
            raise ValueError(f"sidecar line {number}: expected 'loc <id>: <assertion>'")
        lid = int(m.group(1))
        if lid >= len(g.locations):
            raise ValueError(f"sidecar line {number}: no location {lid}")
        body = m.group(2)
        if body.lower() == "false":
            out[lid] = FALSE
            continue
        try:
            poly = parse_assertion(body)
        except ParseError as exc:
            raise ValueError(f"sidecar line {number}: {exc}") from exc
        unknown = poly.variables() - declared
        if unknown:
            raise ValueError(f"sidecar line {number}: unknown variable(s) {sorted(unknown)}")
        out[lid] = poly
    return out


def format_sidecar(inv: InvariantMap, order=None) -> str:
    lines = []
    for lid, poly in inv.items():
        lines.append(f"loc {lid}: {'false' if poly.is_trivially_false() else poly.format(order)}")
    return "\n".join(lines) + "\n"


def _post_premise(src: Polyhedron, t):
    """Premise over the pre-state plus, for noisy updates, a fresh noise variable."""
    premise = src.weakened()
    if isinstance(t.guard, Polyhedron):
        premise = premise.conjoin(t.guard.weakened())
    image = None
    if t.update is not None:
        image = t.update.expr
        noise = t.update.noise
        if noise is not None:
            key = ("noise", t.tid)
            image = image + LinExpr.var(key)
            if noise.lo is not None:
                premise = premise.conjoin(LinConstraint(LinExpr.constant(noise.lo) - LinExpr.var(key)))
            if noise.hi is not None:
                premise = premise.conjoin(LinConstraint(LinExpr.var(key) - LinExpr.constant(noise.hi)))
    return premise, image


def check_inductive(g: Pcfg, inv: InvariantMap) -> list:
    """Reasons why ``inv`` is not inductive; empty when it is.

    Checks that the initial condition lies in the initial location's
    polyhedron and that every transition maps its source polyhedron (meet
    guard, over the full support of any noise) into its target polyhedron.
    Strict constraints are checked in weakened form.
    """
    problems = []
    init_target = inv[g.init].weakened()
    if polyhedron_feasible(g.init_poly):
        for c in init_target.constraints:
            top = maximize_over(g.init_poly, c.expr)
            if top is None or (top is not False and top > 0):
                problems.append(f"initial condition escapes l{g.init}: {c.format(g.variables)}")
    for t in g.transitions:
        src = inv[t.src]
        if src.is_trivially_false():
            continue
        premise, image = _post_premise(src, t)
        if not polyhedron_feasible(premise):
            continue
        state = premise.constraints
        for c in inv[t.dst].weakened().constraints:
            expr = c.expr if image is None else c.expr.substitute(t.update.var, image)
            if not _entails(state, LinConstraint(expr)):
                problems.append(f"transition l{t.src}->l{t.dst} escapes {c.format(g.variables)} at l{t.dst}")
    return problems


@dataclass
class InvariantCheck:
    violations: list
    visited: int
    trials: int

    @property
    def ok(self) -> bool:
        return not self.violations


def check_invariants_empirically(
    g: Pcfg, inv: InvariantMap, trials: int = 100, steps: int = 1000, seed: int = 0, init=None, limit: int = 20
) -> InvariantCheck:
    """Run the simulator and report visited configurations outside their invariant."""
    from .sim import initial_valuations, trace

    violations = []
    visited = 0
    starts = initial_valuations(g, init, seed)
    for k in range(trials):
        x0 = starts[k % len(starts)]
        for step, (lid, val) in enumerate(trace(g, x0, cap=steps, seed=seed + k)):
            visited += 1
            if not inv[lid].holds(val):
                violations.append({"trial": k, "step": step, "location": lid, "valuation": val})
                if len(violations) >= limit:
                    return InvariantCheck(violations, visited, k + 1)
    return InvariantCheck(violations, visited, trials)


__all__ = [
    "InvariantMap",
    "InvariantCheck",
    "default_invariants",
    "load_annotations",
    "parse_sidecar",
    "format_sidecar",
    "check_invariants_empirically",
    "check_inductive",
    "propagate",
]

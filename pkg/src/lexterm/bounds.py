"""Expected-runtime bounds from lexicographic maps with bounded expected
conditional increase (ECI).

For a transition ranked at level ``j`` every later component ``j' > j`` may
rise in expectation by at most a constant ``c[j']``.  With ``C`` the largest
of these constants the expected number of pCFG steps from ``x`` is at most
``sum_j eta_j(l_init, x) * (C + 1) ** (n - j)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .invariants import InvariantMap
from .lexrsm import LexRsmMap, _add_system, _concrete_preexp, premise_of
from .linear import LinExpr, Polyhedron, SymAffine, UnknownPool, entails
from .lp import LpProblem, polyhedron_feasible, solve
from .pcfg import Pcfg, gen_transitions
from .rational import ONE, ZERO, q_str, to_q


@dataclass
class BoundCertificate:
    map: LexRsmMap
    increase: list  # c[j] per component, index 0 is component 1
    uniform: object  # max of increase
    expression: LinExpr  # bound as an affine expression over initial values
    product_expression: LinExpr  # sum_j eta_j * prod_{k > j} (c_k + 1), never larger

    def as_dict(self, order=None) -> dict:
        return {
            "increase": [q_str(c) for c in self.increase],
            "uniform_increase": q_str(self.uniform),
            "bound": self.expression.format(order),
            "product_bound": self.product_expression.format(order),
            "unit": "pCFG steps",
        }


@dataclass
class NoEci:
    reason: str
    component: Optional[int] = None
    transition: Optional[int] = None


def _eci_rows(g: Pcfg, inv: InvariantMap, m: LexRsmMap, c_ids: dict, pool: UnknownPool):
    """Farkas systems for ``preexp(eta_k) - eta_k(src) - c_k <= 0`` above each level."""
    for gt in gen_transitions(g):
        level = m.levels[gt.gid]
        premise = premise_of(inv, gt)
        if not polyhedron_feasible(premise):
            continue
        for k in range(level, m.dimension):
            comp = m.components[k]
            pre, extra = _concrete_preexp(comp, gt)
            target = SymAffine.concrete(pre - comp[gt.source]).add_unknown_const(c_ids[k], -1)
            prem = premise.conjoin(Polyhedron(extra)) if extra else premise
            yield gt, k, entails(prem, target, pool, f"eci{gt.gid}.{k + 1}")


def synthesize_eci(g: Pcfg, inv: InvariantMap, m: LexRsmMap, verified: bool = False):
    """Smallest constant ECI vector by one LP, and the resulting bound."""
    if m.epsilon != ONE:
        raise ValueError("runtime bounds are stated for epsilon = 1")
    if not verified:
        from .lexrsm import verify_symbolically

        if not verify_symbolically(g, inv, m).ok:
            raise ValueError("the map does not pass symbolic verification")
    pool = UnknownPool()
    lp = LpProblem()
    c_ids = {}
    for k in range(m.dimension):
        c_ids[k] = pool.fresh(f"c{k + 1}")
        lp.add_var(c_ids[k], 0, None, f"c{k + 1}")
    for gt, k, system in _eci_rows(g, inv, m, c_ids, pool):
        _add_system(lp, system)
    lp.objective = LinExpr({uid: 1 for uid in c_ids.values()})
    lp.maximize = False
    out = solve(lp)
    if not out.optimal:
        # locate the first component whose increase cannot be bounded
        culprit = _culprit(g, inv, m)
        return NoEci("expected increase of a later component is unbounded", *culprit)
    increase = [out.values.get(c_ids[k], ZERO) for k in range(m.dimension)]
    return make_bound(g, m, increase)


def _culprit(g, inv, m):
    """First (component, transition) whose increase no constant bounds."""
    pool = UnknownPool()
    c_ids = {k: pool.fresh(f"c{k + 1}") for k in range(m.dimension)}
    for gt, k, system in _eci_rows(g, inv, m, c_ids, pool):
        lp = LpProblem()
        lp.add_var(c_ids[k], 0, None)
        _add_system(lp, system)
        if not solve(lp).optimal:
            return (k + 1, gt.gid)
    return (None, None)


def make_bound(g: Pcfg, m: LexRsmMap, increase: list) -> BoundCertificate:
    n = m.dimension
    uniform = max(increase, default=ZERO)
    init = g.init
    expr = LinExpr()
    prod = LinExpr()
    for j in range(n):
        eta = m.components[j][init]
        expr = expr + eta * (uniform + 1) ** (n - 1 - j)
        factor = ONE
        for k in range(j + 1, n):
            factor *= increase[k] + 1
        prod = prod + eta * factor
    return BoundCertificate(m, increase, uniform, expr, prod)


def bound_value(cert: BoundCertificate, x_init: dict, g: Optional[Pcfg] = None):
    """Evaluate the bound at an initial valuation (checked against the initial condition)."""
    vals = {k: to_q(v) for k, v in x_init.items()}
    if g is not None:
        for v in g.variables:
            vals.setdefault(v, ZERO)
        if not g.init_poly.holds(vals):
            raise ValueError("valuation lies outside the initial condition")
    return cert.expression.evaluate({v: vals.get(v, ZERO) for v in cert.expression.variables()})


def eci_holds(g: Pcfg, inv: InvariantMap, m: LexRsmMap, increase: list) -> bool:
    """Whether the given constant vector is a valid ECI bound (used for minimality checks)."""
    pool = UnknownPool()
    lp = LpProblem()
    c_ids = {}
    for k in range(m.dimension):
        c_ids[k] = pool.fresh(f"c{k + 1}")
        value = to_q(increase[k])
        lp.add_var(c_ids[k], value, value)
    for _, _, system in _eci_rows(g, inv, m, c_ids, pool):
        _add_system(lp, system)
    return solve(lp).optimal

"""Lexicographic ranking supermartingale maps: pre-expectations, the LP-based
synthesis loop, symbolic re-checking and a pointwise oracle.

A map assigns one affine expression per location and component.  Every
generalized transition gets a level ``j``: it must drop component ``j`` by
at least epsilon in expectation and must not raise any earlier component.
All components are non-negative on the invariant of every location; the
terminal location is included so that expected-runtime bounds stay sound.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import time
from dataclasses import dataclass, field
from typing import Optional

from .frontend import DistSpec, Interval, Program, parse_expression, pretty_print
from .invariants import InvariantMap
from .linear import (
    FarkasSystem,
    LinConstraint,
    LinExpr,
    Polyhedron,
    SymAffine,
    Template,
    UnknownPool,
    block_key,
    entails,
)
from .lp import LpProblem, feasible, polyhedron_feasible, solve
from .pcfg import GenTransition, Pcfg, gen_transitions
from .rational import ONE, ZERO, q_str, to_q
from .sim import sample_points

INF = math.inf


# ---------------------------------------------------------------------------
# data


@dataclass
class SynthesisConfig:
    epsilon: object = ONE
    max_dimension: Optional[int] = None
    pricing: str = "dantzig"
    guard_support_first: bool = True

    def __post_init__(self):
        self.epsilon = to_q(self.epsilon)
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class LexRsmMap:
    """Components ``[ {location: LinExpr} ]`` and a level per gen transition id."""

    components: list
    levels: dict
    epsilon: object = ONE
    invariant_provenance: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return len(self.components)

    def at(self, j: int, lid: int) -> LinExpr:
        return self.components[j][lid]


@dataclass
class NoLinLexRsm:
    reason: str
    iteration: int
    ranked_so_far: list = field(default_factory=list)
    unranked: list = field(default_factory=list)


@dataclass
class SynthesisStats:
    iterations: int = 0
    lp_rows: list = field(default_factory=list)
    lp_columns: list = field(default_factory=list)
    pivots: int = 0
    constraint_time: float = 0.0
    lp_time: float = 0.0


# ---------------------------------------------------------------------------
# pre-expectation


def _noise_key(t):
    return ("noise", t.tid)


def preexp(eta: dict, gt: GenTransition, x: dict):
    """Expected value of ``eta`` after taking ``gt`` from valuation ``x``.

    Nondeterministic intervals take the supremum; it is infinite when the
    interval is unbounded on the side that raises the target expression.
    """
    if gt.is_bundle:
        return sum((t.prob * eta[t.dst].evaluate(x) for t in gt.transitions), ZERO)
    t = gt.transitions[0]
    target = eta[t.dst]
    if t.update is None:
        return target.evaluate(x)
    upd = t.update
    new = dict(x)
    base = upd.expr.evaluate(x)
    noise = upd.noise
    if isinstance(noise, DistSpec):
        base = base + noise.mean
    elif isinstance(noise, Interval):
        k = target.coeff(upd.var)
        if k > 0:
            if noise.hi is None:
                return INF
            base = base + noise.hi
        elif k < 0:
            if noise.lo is None:
                return INF
            base = base + noise.lo
    new[upd.var] = base
    return target.evaluate(new)


@dataclass
class PointVerdict:
    ok: bool
    clause: str = ""
    detail: str = ""


def is_ranked_pointwise(m: LexRsmMap, g: Pcfg, gt: GenTransition, x: dict, epsilon=None) -> PointVerdict:
    """Check the ranking conditions of ``gt`` at one configuration."""
    eps = m.epsilon if epsilon is None else to_q(epsilon)
    lid = gt.source
    for j, comp in enumerate(m.components):
        value = comp[lid].evaluate(x)
        if value < 0:
            return PointVerdict(False, "non-negativity violated", f"component {j + 1} is {q_str(value)} at l{lid}")
    level = m.levels[gt.gid]
    for j in range(min(level, len(m.components))):
        comp = m.components[j]
        now = comp[lid].evaluate(x)
        nxt = preexp(comp, gt, x)
        bound = now - eps if j == level - 1 else now
        if nxt > bound:
            clause = "rank clause violated" if j == level - 1 else "unaffected clause violated"
            shown = "inf" if nxt == INF else q_str(nxt)
            return PointVerdict(
                False, clause, f"component {j + 1}: pre-expectation {shown} > {q_str(bound)} at l{lid}"
            )
    return PointVerdict(True)


# ---------------------------------------------------------------------------
# symbolic pre-expectation and Farkas blocks


def _sym_preexp(template_at, gt: GenTransition):
    """Symbolic pre-expectation and extra premise constraints (noise variables)."""
    if gt.is_bundle:
        acc = SymAffine()
        for t in gt.transitions:
            acc = acc + template_at(t.dst).scale(t.prob)
        return acc, ()
    t = gt.transitions[0]
    target = template_at(t.dst)
    if t.update is None:
        return target, ()
    upd = t.update
    noise = upd.noise
    if noise is None:
        return target.substitute(upd.var, upd.expr), ()
    if isinstance(noise, DistSpec):
        return target.substitute(upd.var, upd.expr + noise.mean), ()
    key = _noise_key(t)
    extra = []
    if noise.lo is not None:
        extra.append(LinConstraint(LinExpr.constant(noise.lo) - LinExpr.var(key)))
    if noise.hi is not None:
        extra.append(LinConstraint(LinExpr.var(key) - LinExpr.constant(noise.hi)))
    return target.substitute(upd.var, upd.expr + LinExpr.var(key)), tuple(extra)


def premise_of(inv: InvariantMap, gt: GenTransition) -> Polyhedron:
    return inv[gt.source].conjoin(gt.guard).weakened()


class _Blocks:
    """Caches premise satisfiability per generalized transition and location."""

    def __init__(self, g: Pcfg, inv: InvariantMap, gts: list):
        self.g = g
        self.inv = inv
        self.gts = gts
        self.live_gt = {}
        for gt in gts:
            self.live_gt[gt.gid] = polyhedron_feasible(premise_of(inv, gt))
        self.live_loc = {
            loc.lid: polyhedron_feasible(inv[loc.lid].weakened()) for loc in g.locations
        }


def _decrease_query(template_at, gt, inv):
    """Premise and target of ``preexp - eta(src) <= 0`` on I(src) and guard."""
    pre, extra = _sym_preexp(template_at, gt)
    target = pre - template_at(gt.source)
    premise = premise_of(inv, gt)
    if extra:
        premise = premise.conjoin(Polyhedron(extra))
    return premise, target


def _decrease_block(template_at, gt, inv, pool, eps_id, tag) -> FarkasSystem:
    """``preexp - eta(src) + eps <= 0`` on I(src) and guard."""
    premise, target = _decrease_query(template_at, gt, inv)
    if eps_id is not None:
        target = target.add_unknown_const(eps_id)
    return entails(premise, target, pool, tag)


def _nonneg_block(template_at, lid, inv, pool, tag) -> FarkasSystem:
    return entails(inv[lid].weakened(), template_at(lid).scale(-1), pool, tag)


def _add_system(lp: LpProblem, system: FarkasSystem) -> None:
    for m in system.multipliers:
        lp.add_var(m, 0, None)
    for row in system.rows:
        lp.add_constraint(row.expr, row.relation)


@dataclass
class ComponentResult:
    component: dict
    ranked: list
    objective: object
    status: str


def solve_component(
    g: Pcfg,
    inv: InvariantMap,
    blocks: _Blocks,
    unranked: list,
    rank_candidates: list,
    nonneg_locations,
    cfg: SynthesisConfig,
    stats: SynthesisStats,
    tag: str,
    locations=None,
    variables=None,
) -> ComponentResult:
    """One LP: a single affine map that is non-negative, does not increase
    along ``unranked`` and maximises the number of ``rank_candidates``
    (a subset of ``unranked``) it strictly decreases.
    """
    t0 = time.perf_counter()
    pool = UnknownPool()
    locs = [loc.lid for loc in g.locations] if locations is None else sorted(locations)
    tpl = Template.build(locs, g.variables if variables is None else variables, pool, tag)
    lp = LpProblem()
    for uid in tpl.unknowns():
        lp.add_var(uid, None, None, pool.name(uid))
    # Transitions whose queries coincide once irrelevant premise constraints
    # are dropped (typically guard pieces of one branch) share one block and
    # one epsilon, weighted by how many transitions it stands for.
    candidates = {gt.gid for gt in rank_candidates}
    eps_ids, weight, shared = {}, {}, {}
    for lid in nonneg_locations:
        if blocks.live_loc[lid]:
            _add_system(lp, _nonneg_block(tpl.at, lid, inv, pool, f"nn{lid}"))
    for gt in unranked:
        if not blocks.live_gt[gt.gid]:
            if gt.gid in candidates:
                eid = pool.fresh(f"eps[{gt.gid}]")
                eps_ids[gt.gid] = eid
                weight[eid] = 1
                lp.add_var(eid, 0, 1, pool.name(eid))
            continue
        premise, target = _decrease_query(tpl.at, gt, inv)
        key = (gt.gid in candidates, block_key(premise, target))
        if key in shared:
            eid = shared[key]
            if eid is not None:
                eps_ids[gt.gid] = eid
                weight[eid] += 1
            continue
        eid = None
        if gt.gid in candidates:
            eid = pool.fresh(f"eps[{gt.gid}]")
            eps_ids[gt.gid] = eid
            weight[eid] = 1
            lp.add_var(eid, 0, 1, pool.name(eid))
            target = target.add_unknown_const(eid)
        shared[key] = eid
        _add_system(lp, entails(premise, target, pool, f"g{gt.gid}"))
    lp.objective = LinExpr(weight)
    lp.maximize = True
    stats.constraint_time += time.perf_counter() - t0
    stats.lp_rows.append(len(lp.constraints))
    stats.lp_columns.append(len(lp.variables()))
    t1 = time.perf_counter()
    out = None
    if weight:
        # Fast path: ranking every candidate at once is the best possible
        # outcome, and a pure feasibility problem is much cheaper to solve.
        quick = LpProblem(dict(lp.bounds), list(lp.constraints), LinExpr(), True)
        for eid in weight:
            quick.bounds[eid] = (ONE, ONE)
        out = solve(quick, pricing=cfg.pricing)
        stats.pivots += out.pivots
        if not out.optimal:
            out = None
    if out is None:
        out = solve(lp, pricing=cfg.pricing)
        stats.pivots += out.pivots
    stats.lp_time += time.perf_counter() - t1
    if not out.optimal:
        return ComponentResult({}, [], None, out.status)
    eps = {gid: out.values.get(eid, ZERO) for gid, eid in eps_ids.items()}
    positive = [gid for gid, e in eps.items() if e > 0]
    if not positive:
        return ComponentResult({}, [], out.objective, "zero")
    scale = 1 / min(eps[gid] for gid in positive) * cfg.epsilon
    comp = {lid: expr * scale for lid, expr in tpl.instantiate(out.values).items()}
    return ComponentResult(comp, positive, out.objective, "optimal")


def synthesize(g: Pcfg, inv: InvariantMap, cfg: Optional[SynthesisConfig] = None, stats: Optional[SynthesisStats] = None):
    """Iterated LP synthesis of a linear lexicographic ranking map.

    Returns a :class:`LexRsmMap` or :class:`NoLinLexRsm`.  Unless disabled,
    templates over the loop-condition variables are tried first; the full
    template runs only when they fail, so the answer is never lost.
    """
    cfg = cfg or SynthesisConfig()
    stats = stats if stats is not None else SynthesisStats()
    gts = gen_transitions(g)
    blocks = _Blocks(g, inv, gts)
    if cfg.guard_support_first:
        support = guard_variables(g)
        if support and len(support) < len(g.variables):
            res = _synthesize(g, inv, cfg, stats, gts, blocks, support)
            if isinstance(res, LexRsmMap):
                return res
    return _synthesize(g, inv, cfg, stats, gts, blocks, None)


def guard_variables(g: Pcfg) -> list:
    """Variables of loop conditions, in program variable order."""
    used = set()
    for info in g.loops:
        for poly in info.cond.disjuncts:
            used |= poly.variables()
    return [v for v in g.variables if v in used]


def _synthesize(g, inv, cfg, stats, gts, blocks, variables):
    remaining = list(gts)
    components, levels = [], {}
    nonneg = [loc.lid for loc in g.locations]
    cap = cfg.max_dimension or len(gts)
    while remaining:
        if len(components) >= cap:
            return NoLinLexRsm(f"dimension cap {cap} reached", len(components) + 1, sorted(levels), [gt.gid for gt in remaining])
        stats.iterations += 1
        res = solve_component(
            g, inv, blocks, remaining, remaining, nonneg, cfg, stats, f"eta{len(components) + 1}", variables=variables
        )
        if res.status != "optimal":
            reason = "constraint system infeasible" if res.status == "infeasible" else "no transition can be ranked"
            return NoLinLexRsm(reason, len(components) + 1, sorted(levels), [gt.gid for gt in remaining])
        components.append(res.component)
        ranked = set(res.ranked)
        for gid in ranked:
            levels[gid] = len(components)
        remaining = [gt for gt in remaining if gt.gid not in ranked]
    return LexRsmMap(components, levels, cfg.epsilon, dict(inv.provenance))


# ---------------------------------------------------------------------------
# independent checks


@dataclass
class Failure:
    location: int
    transition: Optional[int]
    component: int
    clause: str
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "location": self.location,
            "transition": self.transition,
            "component": self.component,
            "clause": self.clause,
            "detail": self.detail,
        }


@dataclass
class SymbolicVerdict:
    ok: bool
    failures: list
    blocks_checked: int

    def as_dict(self) -> dict:
        return {"ok": self.ok, "blocks_checked": self.blocks_checked, "failures": [f.as_dict() for f in self.failures]}


def _farkas_holds(premise: Polyhedron, target: LinExpr) -> bool:
    """Whether ``target <= 0`` on ``premise``, decided via the Farkas multiplier system."""
    pool = UnknownPool()
    system = entails(premise, SymAffine.concrete(target), pool, "chk")
    lp = LpProblem()
    _add_system(lp, system)
    return feasible(lp)


def _concrete_preexp(comp: dict, gt: GenTransition):
    """Concrete pre-expectation as a LinExpr plus extra premise constraints."""
    sym, extra = _sym_preexp(lambda lid: SymAffine.concrete(comp[lid]), gt)
    return sym.instantiate({}), extra


def verify_symbolically(
    g: Pcfg,
    inv: InvariantMap,
    m: LexRsmMap,
    epsilon=None,
    nonneg_locations=None,
    levels_for=None,
    allow_unranked: bool = False,
) -> SymbolicVerdict:
    """Re-check every condition of the map with concrete coefficients.

    ``nonneg_locations`` and ``levels_for`` let the compositional checker
    restrict the obligations; by default every location, the terminal one
    included, must be non-negative and every generalized transition must carry a level.  With
    ``allow_unranked`` a level of ``dimension + 1`` means the transition only
    has to leave every component unaffected.
    """
    eps = m.epsilon if epsilon is None else to_q(epsilon)
    failures = []
    checked = 0
    gts = gen_transitions(g)
    nonneg = nonneg_locations if nonneg_locations is not None else [loc.lid for loc in g.locations]
    wanted = levels_for if levels_for is not None else [gt.gid for gt in gts]
    required = set(nonneg)
    for gt in gts:
        if gt.gid in wanted:
            required.add(gt.source)
            required.update(t.dst for t in gt.transitions)
    for comp in m.components:
        missing = sorted(required - set(comp))
        if missing:
            raise ValueError(f"map has no expression at location(s) {missing}")
    for lid in nonneg:
        poly = inv[lid].weakened()
        if not polyhedron_feasible(poly):
            continue
        for j, comp in enumerate(m.components):
            checked += 1
            if not _farkas_holds(poly, -comp[lid]):
                failures.append(Failure(lid, None, j + 1, "non-negativity violated", f"{comp[lid].format(g.variables)} < 0 somewhere on I(l{lid})"))
    for gt in gts:
        if gt.gid not in wanted:
            continue
        level = m.levels.get(gt.gid)
        top = len(m.components) + (1 if allow_unranked else 0)
        if level is None or not 1 <= level <= top:
            failures.append(Failure(gt.source, gt.gid, 0, "missing level", gt.describe(g.variables)))
            continue
        premise = premise_of(inv, gt)
        if not polyhedron_feasible(premise):
            continue
        for j in range(min(level, len(m.components))):
            comp = m.components[j]
            pre, extra = _concrete_preexp(comp, gt)
            target = pre - comp[gt.source]
            if j == level - 1:
                target = target + eps
            prem = premise.conjoin(Polyhedron(extra)) if extra else premise
            checked += 1
            if not _farkas_holds(prem, target):
                clause = "rank clause violated" if j == level - 1 else "unaffected clause violated"
                failures.append(Failure(gt.source, gt.gid, j + 1, clause, gt.describe(g.variables)))
    return SymbolicVerdict(not failures, failures, checked)


@dataclass
class PointwiseReport:
    checked: int
    violations: list
    seed: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {"checked": self.checked, "violations": self.violations[:20], "violation_count": len(self.violations), "seed": self.seed}


def pointwise_check(
    g: Pcfg,
    inv: InvariantMap,
    m: LexRsmMap,
    per_transition: int = 50,
    seed: int = 0,
    epsilon=None,
    check=None,
    transitions=None,
    extra_nonneg=None,
) -> PointwiseReport:
    """Evaluate the conditions exactly at sampled points of invariant and guard."""
    rng = random.Random(seed)
    check = check or (lambda gt, x: is_ranked_pointwise(m, g, gt, x, epsilon))
    checked = 0
    violations = []
    for gt in transitions if transitions is not None else gen_transitions(g):
        premise = inv[gt.source].conjoin(gt.guard)
        for x in sample_points(premise, g.variables, per_transition, rng):
            checked += 1
            verdict = check(gt, x)
            if not verdict.ok:
                violations.append(
                    {
                        "transition": gt.gid,
                        "location": gt.source,
                        "valuation": {k: q_str(v) for k, v in x.items()},
                        "clause": verdict.clause,
                        "detail": verdict.detail,
                    }
                )
    for lid in extra_nonneg if extra_nonneg is not None else (g.term,):
        for x in sample_points(inv[lid], g.variables, per_transition, rng):
            checked += 1
            for j, comp in enumerate(m.components):
                value = comp[lid].evaluate(x)
                if value < 0:
                    violations.append(
                        {
                            "transition": None,
                            "location": lid,
                            "valuation": {k: q_str(v) for k, v in x.items()},
                            "clause": "non-negativity violated",
                            "detail": f"component {j + 1} is {q_str(value)} at l{lid}",
                        }
                    )
    return PointwiseReport(checked, violations, seed)


# ---------------------------------------------------------------------------
# certificates


CERT_FORMAT = "lexterm-certificate/1"


def program_digest(ast: Program) -> str:
    return hashlib.sha256(pretty_print(ast).encode()).hexdigest()


def certificate_json(ast: Program, g: Pcfg, inv: InvariantMap, m: LexRsmMap) -> dict:
    order = g.variables
    gts = gen_transitions(g)
    return {
        "format": CERT_FORMAT,
        "program_digest": program_digest(ast),
        "variables": list(order),
        "epsilon": q_str(m.epsilon),
        "dimension": m.dimension,
        "components": [{f"l{lid}": comp[lid].format(order) for lid in sorted(comp)} for comp in m.components],
        "levels": [
            {"id": gt.gid, "source": gt.source, "describe": gt.describe(order), "level": m.levels.get(gt.gid)} for gt in gts
        ],
        "invariants": {f"l{lid}": ("false" if p.is_trivially_false() else p.format(order)) for lid, p in inv.items()},
        "invariant_provenance": {f"l{lid}": inv.provenance.get(lid, "default") for lid, _ in inv.items()},
    }


class CertificateError(ValueError):
    pass


def load_certificate(data: dict, ast: Program, g: Pcfg):
    """Parse a certificate document into a map and the invariant map it relies on."""
    from .frontend import ParseError, parse_assertion
    from .linear import FALSE

    if data.get("format") != CERT_FORMAT:
        raise CertificateError(f"unknown certificate format {data.get('format')!r}")
    digest = program_digest(ast)
    if data.get("program_digest") != digest:
        raise CertificateError("certificate was issued for a different program (digest mismatch)")
    try:
        eps = to_q(str(data.get("epsilon", "1")))
        comps = []
        for raw in data["components"]:
            comp = {}
            for key, text in raw.items():
                comp[int(str(key).lstrip("l"))] = parse_expression(str(text))
            comps.append(comp)
        levels = {}
        for row in data["levels"]:
            if row.get("level") is not None:
                levels[int(row["id"])] = int(row["level"])
        polys = {}
        for key, text in data["invariants"].items():
            lid = int(str(key).lstrip("l"))
            polys[lid] = FALSE if text == "false" else (Polyhedron(()) if text == "true" else parse_assertion(text))
        prov = {int(str(k).lstrip("l")): v for k, v in data.get("invariant_provenance", {}).items()}
    except (KeyError, TypeError, ValueError, ParseError) as exc:
        raise CertificateError(f"malformed certificate: {exc}") from exc
    for lid in range(len(g.locations)):
        polys.setdefault(lid, Polyhedron(()))
    return LexRsmMap(comps, levels, eps, prov), InvariantMap(polys, prov)


def dumps_certificate(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"

"""Loop-by-loop termination proofs with non-negative compositional
supermartingales (NCSMs).

For a loop P its sub-pCFG consists of the locations created for P plus the
location control reaches when P exits, which acts as the sub-pCFG's
terminal.  Locations belonging to loops nested in P form ``loops(P)``; the
rest is the ``slice``.  An NCSM must be non-negative on every location of
the sub-pCFG, must rank every transition leaving a slice location at some
level and must leave every component unaffected on transitions inside
nested loops.  Loops are certified innermost first.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from .invariants import InvariantMap
from .lexrsm import (
    LexRsmMap,
    SynthesisConfig,
    SynthesisStats,
    _Blocks,
    is_ranked_pointwise,
    pointwise_check,
    solve_component,
    verify_symbolically,
)
from .pcfg import LoopInfo, Pcfg, gen_transitions


@dataclass(frozen=True)
class LoopDecomposition:
    loop: LoopInfo
    locations: frozenset  # all locations of the sub-pCFG, exit location included
    loops: frozenset
    slice: frozenset
    exit_location: int

    @property
    def head(self) -> int:
        return self.loop.head


def decompose(g: Pcfg, loop_head: int) -> LoopDecomposition:
    """Split a loop's sub-pCFG into nested-loop locations and the slice."""
    try:
        info = g.loop_by_head(loop_head)
    except KeyError:
        raise ValueError(f"l{loop_head} is not a while-loop head") from None
    nested = set()
    for child_id in info.children:
        nested |= g.loops[child_id].locations
    sub = frozenset(info.locations | {info.exit_target})
    return LoopDecomposition(info, sub, frozenset(nested), frozenset(sub - nested), info.exit_target)


@dataclass
class NcsmCertificate:
    loop_id: int
    head: int
    depth: int
    map: LexRsmMap
    decomposition: LoopDecomposition
    slice_transitions: list
    nested_transitions: list
    certified_after: list = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return self.map.dimension


@dataclass
class NoNcsm:
    loop_id: int
    head: int
    reason: str


def _sub_transitions(g: Pcfg, d: LoopDecomposition):
    inner = d.loop.locations
    gts = [gt for gt in gen_transitions(g) if gt.source in inner]
    slice_gts = [gt for gt in gts if gt.source in d.slice]
    nested_gts = [gt for gt in gts if gt.source in d.loops]
    return gts, slice_gts, nested_gts


def _never_increased(g: Pcfg, d: LoopDecomposition, var: str) -> bool:
    """Every assignment to ``var`` inside the loop is a reset to a
    non-positive constant or a decrement by a constant."""
    for lid in d.loop.locations:
        for t in g.outgoing(lid):
            upd = t.update
            if upd is None or upd.var != var:
                continue
            if upd.noise is not None:
                return False
            others = set(upd.expr.coeffs) - {var}
            if others or upd.expr.coeff(var) not in (0, 1) or upd.expr.const > 0:
                return False
    return True


def preferred_supports(g: Pcfg, d: LoopDecomposition) -> list:
    """Single variables to try as the whole template, most natural first.

    Guard variables the loop never increases come first, then the other
    guard variables in guard order.
    """
    guard_vars = []
    for poly in d.loop.cond.disjuncts:
        for c in poly.constraints:
            for v in c.expr.coeffs:
                if v not in guard_vars:
                    guard_vars.append(v)
    steady = [v for v in guard_vars if _never_increased(g, d, v)]
    return steady + [v for v in guard_vars if v not in steady]


def synthesize_ncsm(
    g: Pcfg,
    inv: InvariantMap,
    d: LoopDecomposition,
    dims: Optional[int] = None,
    cfg: Optional[SynthesisConfig] = None,
    stats: Optional[SynthesisStats] = None,
    prefer_simple: bool = True,
):
    """Iterated LP as in the monolithic case, restricted to one sub-pCFG.

    Only slice transitions contribute to the objective; nested-loop
    transitions must be unaffected by every component.  ``dims=1`` gives the
    one-dimensional variant.  With ``prefer_simple`` single-variable
    templates over the loop's guard variables are tried before the full
    template.
    """
    if prefer_simple:
        for v in preferred_supports(g, d):
            res = _synthesize_ncsm(g, inv, d, dims, cfg, stats, (v,))
            if isinstance(res, NcsmCertificate):
                return res
    return _synthesize_ncsm(g, inv, d, dims, cfg, stats, None)


def _synthesize_ncsm(g, inv, d, dims, cfg, stats, variables):
    cfg = cfg or SynthesisConfig()
    stats = stats if stats is not None else SynthesisStats()
    gts, slice_gts, nested_gts = _sub_transitions(g, d)
    blocks = _Blocks(g, inv, gts)
    cap = dims or max(1, len(slice_gts))
    remaining = list(slice_gts)
    components, levels = [], {}
    while remaining:
        if len(components) >= cap:
            return NoNcsm(d.loop.loop_id, d.head, f"dimension cap {cap} reached with {len(remaining)} slice transition(s) unranked")
        stats.iterations += 1
        res = solve_component(
            g,
            inv,
            blocks,
            remaining + nested_gts,
            remaining,
            sorted(d.locations),
            cfg,
            stats,
            f"ncsm{d.loop.loop_id}.{len(components) + 1}",
            locations=d.locations,
            variables=variables,
        )
        if res.status != "optimal":
            why = "constraint system infeasible" if res.status == "infeasible" else "no slice transition can be ranked"
            return NoNcsm(d.loop.loop_id, d.head, why)
        components.append(res.component)
        for gid in res.ranked:
            levels[gid] = len(components)
        ranked = set(res.ranked)
        remaining = [gt for gt in remaining if gt.gid not in ranked]
    for gt in nested_gts:
        levels[gt.gid] = len(components) + 1
    m = LexRsmMap(components, levels, cfg.epsilon, dict(inv.provenance))
    return NcsmCertificate(
        d.loop.loop_id, d.head, d.loop.depth, m, d, [gt.gid for gt in slice_gts], [gt.gid for gt in nested_gts]
    )


def verify_ncsm(g: Pcfg, inv: InvariantMap, cert: NcsmCertificate, epsilon=None):
    d = cert.decomposition
    return verify_symbolically(
        g,
        inv,
        cert.map,
        epsilon=epsilon,
        nonneg_locations=sorted(d.locations),
        levels_for=cert.slice_transitions + cert.nested_transitions,
        allow_unranked=True,
    )


def pointwise_ncsm(g: Pcfg, inv: InvariantMap, cert: NcsmCertificate, per_transition: int = 50, seed: int = 0):
    """Pointwise oracle on the sub-pCFG, plus non-negativity at the exit location."""
    wanted = set(cert.slice_transitions + cert.nested_transitions)
    gts = [gt for gt in gen_transitions(g) if gt.gid in wanted]
    return pointwise_check(
        g, inv, cert.map, per_transition, seed, transitions=gts, extra_nonneg=(cert.decomposition.exit_location,)
    )


@dataclass
class CompositionalResult:
    proved: bool
    certificates: list
    failures: list
    order: list
    fallback: str = "uniformly integrable PVSM fallback unavailable"
    seconds: float = 0.0

    def ledger(self, g: Pcfg) -> list:
        order = g.variables
        rows = []
        for cert in self.certificates:
            d = cert.decomposition
            rows.append(
                {
                    "loop": cert.loop_id,
                    "head": cert.head,
                    "depth": cert.depth,
                    "dimension": cert.dimension,
                    "slice": sorted(d.slice),
                    "nested": sorted(d.loops),
                    "exit_location": d.exit_location,
                    "map": [{f"l{lid}": comp[lid].format(order) for lid in sorted(comp)} for comp in cert.map.components],
                    "levels": {str(k): v for k, v in sorted(cert.map.levels.items())},
                    "certified_after": cert.certified_after,
                }
            )
        return rows


def prove_compositional(
    g: Pcfg,
    inv: InvariantMap,
    dims: Optional[int] = None,
    cfg: Optional[SynthesisConfig] = None,
    stats=None,
    prefer_simple: bool = True,
) -> CompositionalResult:
    """Certify loops from the deepest nesting level outwards.

    Each loop is attempted only after all its nested loops were certified;
    a failure anywhere means the program cannot be proved this way.
    """
    t0 = time.perf_counter()
    certs, failures, order = [], [], []
    done = set()
    for depth in sorted({info.depth for info in g.loops}, reverse=True):
        for info in [i for i in g.loops if i.depth == depth]:
            assert all(child in done for child in info.children), "nested loops must be certified first"
            res = synthesize_ncsm(g, inv, decompose(g, info.head), dims, cfg, stats, prefer_simple)
            order.append(info.loop_id)
            if isinstance(res, NoNcsm):
                failures.append(res)
                continue
            res.certified_after = sorted(done & set(_descendants(g, info)))
            certs.append(res)
            done.add(info.loop_id)
    return CompositionalResult(not failures, certs, failures, order, seconds=time.perf_counter() - t0)


def _descendants(g: Pcfg, info: LoopInfo) -> list:
    out = []
    stack = list(info.children)
    while stack:
        c = stack.pop()
        out.append(c)
        stack.extend(g.loops[c].children)
    return out


__all__ = [
    "LoopDecomposition",
    "NcsmCertificate",
    "NoNcsm",
    "CompositionalResult",
    "decompose",
    "synthesize_ncsm",
    "prove_compositional",
    "verify_ncsm",
    "pointwise_ncsm",
    "is_ranked_pointwise",
]

"""Concrete execution of pCFGs: single runs, Monte Carlo estimates and
sampling of configurations inside polyhedra.

Values are exact rationals.  Uniform samples are 64-bit dyadic rationals,
probabilistic branches compare a dyadic draw with the exact probability.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .frontend import DistSpec, Interval
from .linear import LinConstraint, LinExpr, Polyhedron
from .lp import LpProblem, solve
from .pcfg import NB, PB, A, Pcfg
from .rational import ONE, Q, ZERO, to_q

DEFAULT_CAP = 10**6
CLIP = Q(10**6)
LADDER = (1, 2, 10, 1000)
_MASK = (1 << 64) - 1
_TWO64 = Q(1 << 64)


class SimulationError(RuntimeError):
    pass


def splitmix(value: int) -> int:
    """64-bit mixing used to derive independent seeds and path hashes."""
    z = (value + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def trial_seed(base: int, k: int) -> int:
    return splitmix((base & _MASK) ^ splitmix(k))


# ---------------------------------------------------------------------------
# schedulers


@dataclass
class SchedulerPolicy:
    """How nondeterminism is resolved.

    ``uniform``: uniformly random successor or interval point (clipped).
    ``adversarial``: choices from a seeded hash of the path so far, with
    interval endpoints favoured.
    ``scripted``: explicit list of choices (successor index or value).
    """

    kind: str = "uniform"
    script: Sequence = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "adversarial", "scripted"):
            raise ValueError(f"unknown scheduler policy {self.kind!r}")


class _Resolver:
    def __init__(self, policy: SchedulerPolicy, rng: random.Random):
        self.policy = policy
        self.rng = rng
        self.path = splitmix(policy.seed)
        self.cursor = 0

    def observe(self, lid: int) -> None:
        if self.policy.kind == "adversarial":
            self.path = splitmix(self.path ^ (lid + 1))

    def _next_script(self):
        if self.cursor >= len(self.policy.script):
            raise SimulationError("scripted policy exhausted")
        value = self.policy.script[self.cursor]
        self.cursor += 1
        return value

    def branch(self, n: int) -> int:
        kind = self.policy.kind
        if kind == "uniform":
            return self.rng.randrange(n)
        if kind == "adversarial":
            return self.path % n
        choice = int(self._next_script())
        if not 0 <= choice < n:
            raise SimulationError(f"scripted branch {choice} out of range 0..{n - 1}")
        return choice

    def point(self, lo, hi):
        lo = -CLIP if lo is None else lo
        hi = CLIP if hi is None else hi
        kind = self.policy.kind
        if kind == "uniform":
            return lo + (hi - lo) * Q(self.rng.getrandbits(64), 1 << 64)
        if kind == "adversarial":
            pick = self.path % 4
            if pick == 0:
                return lo
            if pick == 1:
                return hi
            return lo + (hi - lo) * Q(splitmix(self.path) & _MASK, 1 << 64)
        value = to_q(self._next_script())
        if value < lo or value > hi:
            raise SimulationError(f"scripted value {value} outside [{lo}, {hi}]")
        return value


# ---------------------------------------------------------------------------
# compiled steps


def _draw(dist: DistSpec, rng: random.Random):
    u = Q(rng.getrandbits(64), 1 << 64)
    if dist.name == "bernoulli":
        return ONE if u < dist.mean else ZERO
    lo, hi = dist.lo, dist.hi
    if lo is None or hi is None:
        # unbounded support: only the mean is known
        return dist.mean
    return lo + (hi - lo) * u


def _compile_expr(expr: LinExpr, index: dict):
    terms = [(index[v], c) for v, c in expr.coeffs.items()]
    const = expr.const
    return terms, const


def _eval(compiled, vals):
    terms, acc = compiled
    for i, c in terms:
        acc = acc + c * vals[i]
    return acc


class _Program:
    """Flat, index-based view of a pCFG for fast stepping."""

    def __init__(self, g: Pcfg):
        self.g = g
        self.index = {v: i for i, v in enumerate(g.variables)}
        self.kind = [loc.kind for loc in g.locations]
        self.table = []
        for loc in g.locations:
            outs = g.outgoing(loc.lid)
            if loc.kind == A:
                t = outs[0]
                upd = None
                if t.update is not None:
                    upd = (self.index[t.update.var], _compile_expr(t.update.expr, self.index), t.update.noise)
                self.table.append((t.dst, upd, t.role == "enter"))
            elif loc.kind == PB:
                cum = []
                acc = ZERO
                for t in outs:
                    acc += t.prob
                    cum.append((acc, t.dst, t.role == "enter"))
                self.table.append(cum)
            elif loc.kind == NB:
                self.table.append([(t.dst, t.role == "enter") for t in outs])
            else:
                rows = []
                for t in outs:
                    cons = [(_compile_expr(c.expr, self.index), c.strict) for c in t.guard.constraints]
                    rows.append((cons, t.dst, t.role == "enter"))
                self.table.append(rows)


def _guard_ok(cons, vals) -> bool:
    for compiled, strict in cons:
        v = _eval(compiled, vals)
        if v > 0 or (strict and v == 0):
            return False
    return True


def _step(prog: _Program, lid: int, vals: list, rng: random.Random, resolver: _Resolver):
    """Advance one step in place; returns (next location, entered-loop flag)."""
    kind = prog.kind[lid]
    entry = prog.table[lid]
    if kind == A:
        dst, upd, enter = entry
        if upd is not None:
            i, compiled, noise = upd
            value = _eval(compiled, vals)
            if isinstance(noise, DistSpec):
                value = value + _draw(noise, rng)
            elif isinstance(noise, Interval):
                value = value + resolver.point(noise.lo, noise.hi)
            if value > CLIP:
                value = CLIP
            elif value < -CLIP:
                value = -CLIP
            vals[i] = value
        return dst, enter
    if kind == PB:
        u = Q(rng.getrandbits(64), 1 << 64)
        for acc, dst, enter in entry:
            if u < acc:
                return dst, enter
        return entry[-1][1], entry[-1][2]
    if kind == NB:
        dst, enter = entry[resolver.branch(len(entry))]
        return dst, enter
    hits = [(dst, enter) for cons, dst, enter in entry if _guard_ok(cons, vals)]
    if len(hits) != 1:
        raise SimulationError(f"{len(hits)} enabled transitions at l{lid}")
    return hits[0]


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    terminated: bool
    steps: int
    iterations: int
    seed: int
    trace: Optional[list] = None
    final: Optional[dict] = None


def _initial(g: Pcfg, x_init: dict) -> list:
    vals = []
    for v in g.variables:
        vals.append(to_q(x_init.get(v, 0)))
    return vals


def run(
    g: Pcfg,
    x_init: dict,
    policy: Optional[SchedulerPolicy] = None,
    cap: int = DEFAULT_CAP,
    seed: int = 0,
    keep_trace: bool = False,
    _prog: Optional[_Program] = None,
) -> RunResult:
    """Execute one run from ``(l_init, x_init)`` for at most ``cap`` steps."""
    prog = _prog or _Program(g)
    policy = policy or SchedulerPolicy()
    rng = random.Random(seed)
    resolver = _Resolver(policy, rng)
    vals = _initial(g, x_init)
    lid = g.init
    term = g.term
    steps = 0
    iterations = 0
    tr = [(lid, dict(zip(g.variables, vals)))] if keep_trace else None
    while lid != term and steps < cap:
        resolver.observe(lid)
        lid, enter = _step(prog, lid, vals, rng, resolver)
        steps += 1
        if enter:
            iterations += 1
        if keep_trace:
            tr.append((lid, dict(zip(g.variables, vals))))
    return RunResult(lid == term, steps, iterations, seed, tr, dict(zip(g.variables, vals)))


def trace(g: Pcfg, x_init: dict, cap: int = 1000, seed: int = 0, policy: Optional[SchedulerPolicy] = None) -> Iterator:
    """Yield every visited configuration ``(location, valuation)``, initial one included."""
    prog = _Program(g)
    policy = policy or SchedulerPolicy()
    rng = random.Random(seed)
    resolver = _Resolver(policy, rng)
    vals = _initial(g, x_init)
    lid = g.init
    yield lid, dict(zip(g.variables, vals))
    for _ in range(cap):
        if lid == g.term:
            return
        resolver.observe(lid)
        lid, _ = _step(prog, lid, vals, rng, resolver)
        yield lid, dict(zip(g.variables, vals))


@dataclass
class Estimate:
    trials: int
    terminated: int
    frequency: float
    mean_steps: float
    steps_half_width: float
    mean_iterations: float
    iterations_half_width: float
    max_steps: int
    unstable: bool
    seed: int
    per_trial: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "trials": self.trials,
            "terminated": self.terminated,
            "frequency": self.frequency,
            "mean_steps": self.mean_steps,
            "steps_half_width": self.steps_half_width,
            "mean_iterations": self.mean_iterations,
            "iterations_half_width": self.iterations_half_width,
            "max_steps": self.max_steps,
            "heavy_tail_warning": self.unstable,
            "seed": self.seed,
        }


def _mean_hw(xs: list, z: float):
    n = len(xs)
    if n == 0:
        return 0.0, 0.0
    mean = math.fsum(xs) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return mean, z * math.sqrt(var / n)


def estimate(
    g: Pcfg,
    x_init: dict,
    policy: Optional[SchedulerPolicy] = None,
    trials: int = 1000,
    cap: int = DEFAULT_CAP,
    seed: int = 0,
    z: float = 1.96,
    keep_per_trial: bool = False,
    workers: int = 1,
) -> Estimate:
    """Independent runs with split seeds; normal-approximation half widths.

    Means cover all runs; capped runs count with the cap as their step count,
    which biases the mean low.  ``unstable`` flags a heavy tail: the largest
    single run exceeds a tenth of the total.  Trial ``k`` always uses the
    same seed, so ``workers > 1`` (a process pool) gives identical results.
    """
    if workers > 1 and trials >= 2 * workers:
        from concurrent.futures import ProcessPoolExecutor

        cuts = [trials * i // workers for i in range(workers + 1)]
        with ProcessPoolExecutor(workers) as pool:
            parts = pool.map(_trial_range, [(g, x_init, policy, cap, seed, a, b) for a, b in zip(cuts, cuts[1:])])
            results = [r for part in parts for r in part]
    else:
        results = _trial_range((g, x_init, policy, cap, seed, 0, trials))
    steps, iters, rows = [], [], []
    done = 0
    for k, (terminated, n_steps, n_iter, trial) in enumerate(results):
        done += terminated
        steps.append(n_steps)
        iters.append(n_iter)
        if keep_per_trial:
            rows.append({"trial": k, "seed": trial, "terminated": terminated, "steps": n_steps, "iterations": n_iter})
    ms, hs = _mean_hw(steps, z)
    mi, hi = _mean_hw(iters, z)
    total = sum(steps)
    unstable = trials >= 10 and total > 0 and max(steps) * 10 > total
    return Estimate(trials, done, done / trials if trials else 0.0, ms, hs, mi, hi, max(steps, default=0), unstable, seed, rows)


def _trial_range(args) -> list:
    g, x_init, policy, cap, seed, first, last = args
    prog = _Program(g)
    out = []
    for k in range(first, last):
        r = run(g, x_init, policy, cap, trial_seed(seed, k), _prog=prog)
        out.append((r.terminated, r.steps, r.iterations, r.seed))
    return out


# ---------------------------------------------------------------------------
# sampling points of polyhedra


def _lp_point(poly: Polyhedron, variables, objective: Optional[LinExpr] = None, extra=()):
    prob = LpProblem()
    for c in poly.weakened().constraints:
        prob.add_constraint(c.expr, "<=")
    for c in extra:
        prob.add_constraint(c.expr, "<=")
    for v in variables:
        prob.add_var(v, None, None)
    if objective is not None:
        prob.objective = objective
    out = solve(prob)
    if not out.optimal:
        return None
    return {v: out.values.get(v, ZERO) for v in variables}


def _is_box(poly: Polyhedron) -> bool:
    return all(len(c.expr.coeffs) == 1 for c in poly.constraints)


def sample_points(poly: Polyhedron, variables, count: int, rng: random.Random) -> list:
    """Rational points of ``poly`` (strict parts honoured).

    Mixes LP vertices in random directions, an escalation ladder on each
    variable, and random convex combinations of those anchors.
    """
    variables = list(variables)
    if poly.is_trivially_false():
        return []
    if _is_box(poly):
        pts = _box_points(poly, variables, count, rng)
        if pts is not None:
            return pts
    anchors = []

    def keep(p):
        if p is not None and poly.holds(p) and p not in anchors:
            anchors.append(p)

    base = _lp_point(poly, variables)
    if base is None:
        return []
    keep(base)
    budget_dirs = min(4, 2 * len(variables))
    for _ in range(budget_dirs):
        direction = LinExpr({v: rng.choice((-1, 1)) * rng.randint(1, 3) for v in variables}) if variables else None
        keep(_lp_point(poly, variables, direction, extra=_clip_rows(variables)))
    for v in variables:
        for rung in LADDER:
            for sign in (1, -1):
                fix = LinExpr.var(v) - sign * rung
                keep(_lp_point(poly, variables, None, extra=(LinConstraint(fix), LinConstraint(-fix))))
    # interior-ish points: convex combinations keep every weak constraint
    pts = list(anchors)
    tries = 0
    seen = {_key(p, variables) for p in pts}
    while len(pts) < count and anchors and tries < 20 * count:
        tries += 1
        # blending earlier blends keeps producing fresh points
        a, b = rng.choice(anchors), rng.choice(pts)
        lam = Q(rng.randint(0, 64), 64)
        p = {v: lam * a[v] + (1 - lam) * b[v] for v in variables}
        key = _key(p, variables)
        if key not in seen and poly.holds(p):
            seen.add(key)
            pts.append(p)
    return pts[: max(count, len(anchors))] if count else pts


def _box_points(poly: Polyhedron, variables, count: int, rng: random.Random):
    """Points of a box without LPs: per-variable candidates, then products.

    Returns None when some variable has no candidate value, so the caller
    falls back to the general sampler.
    """
    per_var = {v: [] for v in variables}
    for c in poly.constraints:
        (v, a), = c.expr.coeffs.items()
        per_var.setdefault(v, []).append(c)
    cands = {}
    for v in variables:
        rows = per_var[v]
        lo = max((-c.expr.const / c.expr.coeffs[v] for c in rows if c.expr.coeffs[v] < 0), default=None)
        hi = min((-c.expr.const / c.expr.coeffs[v] for c in rows if c.expr.coeffs[v] > 0), default=None)
        values = [ZERO]
        for rung in LADDER:
            values += [Q(rung), Q(-rung)]
        for end in (lo, hi):
            if end is not None:
                values += [end, end + 1, end - 1, end + Q(1, 2), end - Q(1, 2)]
        if lo is not None and hi is not None:
            values.append((lo + hi) / 2)
        ok = []
        for x in values:
            if x not in ok and Polyhedron(tuple(rows)).holds({v: x}):
                ok.append(x)
        if not ok:
            return None
        cands[v] = sorted(ok)
    anchors = []
    extremes = [{v: (cands[v][0] if w != v else cands[v][k]) for v in variables} for w in variables for k in (0, -1)]
    for p in [{v: cands[v][0] for v in variables}, {v: cands[v][-1] for v in variables}] + extremes:
        if p not in anchors:
            anchors.append(p)
    want = max(count, len(anchors))
    boxes = {v: (Polyhedron(tuple(per_var[v])), _bounds(per_var[v], v)) for v in variables}
    seen = {_key(p, variables) for p in anchors}
    tries = 0
    while len(anchors) < want and tries < 20 * want:
        tries += 1
        if tries % 2:
            p = {v: rng.choice(cands[v]) for v in variables}
        else:
            p = {v: _random_value(boxes[v], v, cands[v], rng) for v in variables}
        key = _key(p, variables)
        if key not in seen:
            seen.add(key)
            anchors.append(p)
    return anchors[:want]


def _key(p: dict, variables) -> tuple:
    return tuple(p[v] for v in variables)


def _bounds(rows, v):
    lo = max((-c.expr.const / c.expr.coeffs[v] for c in rows if c.expr.coeffs[v] < 0), default=None)
    hi = min((-c.expr.const / c.expr.coeffs[v] for c in rows if c.expr.coeffs[v] > 0), default=None)
    return lo, hi


def _random_value(box, v, fallback, rng: random.Random):
    """Random rational inside one variable's interval, biased towards its ends."""
    poly, (lo, hi) = box
    for _ in range(8):
        if lo is not None and hi is not None:
            x = lo + (hi - lo) * Q(rng.randint(0, 1024), 1024)
        else:
            offset = Q(rng.randint(0, 8 * 2 ** rng.randint(0, 10)), rng.choice((1, 2, 4, 8)))
            if lo is not None:
                x = lo + offset
            elif hi is not None:
                x = hi - offset
            else:
                x = offset * rng.choice((1, -1))
        if poly.holds({v: x}):
            return x
    return rng.choice(fallback)


def _clip_rows(variables):
    rows = []
    for v in variables:
        rows.append(LinConstraint(LinExpr.var(v) - 1000))
        rows.append(LinConstraint(-LinExpr.var(v) - 1000))
    return rows


def sample_configs(g: Pcfg, inv, per_location: int = 20, seed: int = 0) -> list:
    """``(location, valuation)`` pairs inside each location's invariant."""
    rng = random.Random(seed)
    out = []
    for loc in g.locations:
        poly = inv[loc.lid]
        for p in sample_points(poly, g.variables, per_location, rng):
            out.append((loc.lid, p))
    return out


def initial_valuations(g: Pcfg, init: Optional[dict] = None, seed: int = 0, count: int = 4) -> list:
    """Starting valuations: the given one, or points of the initial polyhedron."""
    if init is not None:
        return [{v: to_q(init.get(v, 0)) for v in g.variables}]
    if g.init_poly.is_true():
        return [{v: ZERO for v in g.variables}]
    pts = sample_points(g.init_poly, g.variables, count, random.Random(seed))
    if not pts:
        raise SimulationError("the initial condition is unsatisfiable")
    small = sorted(pts, key=lambda p: sum(abs(x) for x in p.values()))
    return small[:count]

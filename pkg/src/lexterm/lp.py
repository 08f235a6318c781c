"""Exact rational linear programming.

A two-phase primal simplex on a sparse tableau of ``mpq`` entries.  Bland's
smallest-index rule picks entering and leaving variables, so the method never
cycles and identical problems produce identical answers.  Every optimal point
is re-checked against the original constraints before it is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Optional

from .linear import LinExpr
from .rational import ONE, ZERO, q_str, to_q

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_FILL = 10**9


class LpAssertionError(AssertionError):
    """Raised when a returned optimum fails the exact feasibility re-check."""


@dataclass
class LpProblem:
    """Maximize (or minimize) ``objective`` subject to ``expr rel 0`` rows.

    Attributes:
        bounds: variable id -> (lower, upper); ``None`` means unbounded.
        constraints: list of ``(expr, relation)`` with relation in
            ``"<="``, ``"=="``, ``">="`` comparing ``expr`` with zero.
        objective: affine objective over variable ids.
        maximize: optimisation sense.
    """

    bounds: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    objective: LinExpr = field(default_factory=LinExpr)
    maximize: bool = True
    names: dict = field(default_factory=dict)

    def add_var(self, vid: Hashable, lower=None, upper=None, name: str | None = None) -> Hashable:
        lo = None if lower is None else to_q(lower)
        hi = None if upper is None else to_q(upper)
        self.bounds[vid] = (lo, hi)
        if name is not None:
            self.names[vid] = name
        return vid

    def add_constraint(self, expr: LinExpr, relation: str, rhs=0) -> None:
        if relation not in ("<=", "==", ">="):
            raise ValueError(f"unknown relation {relation!r}")
        self.constraints.append((expr - rhs if rhs else expr, relation))

    def variables(self) -> list:
        seen = dict.fromkeys(self.bounds)
        for expr, _ in self.constraints:
            for k in expr.coeffs:
                seen.setdefault(k, None)
        for k in self.objective.coeffs:
            seen.setdefault(k, None)
        return list(seen)

    def dump(self) -> str:
        """Plain LP text with objective, constraint and bounds sections."""

        def label(k):
            return str(self.names.get(k, f"v{k}" if isinstance(k, int) else k))

        def show(expr: LinExpr) -> str:
            return expr.rename({k: label(k) for k in expr.coeffs}).format()

        lines = ["Maximize" if self.maximize else "Minimize", f"  obj: {show(self.objective)}", "Subject To"]
        for i, (expr, rel) in enumerate(self.constraints):
            lhs = expr.linear_part()
            rhs = -expr.const
            lines.append(f"  c{i}: {show(lhs) if lhs.coeffs else '0'} {'=' if rel == '==' else rel} {q_str(rhs)}")
        lines.append("Bounds")
        for vid in self.variables():
            lo, hi = self.bounds.get(vid, (None, None))
            lo_s = "-inf" if lo is None else q_str(lo)
            hi_s = "+inf" if hi is None else q_str(hi)
            lines.append(f"  {lo_s} <= {label(vid)} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines)


@dataclass
class LpOutcome:
    status: str
    values: dict = field(default_factory=dict)
    objective: Optional[object] = None
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    """Sparse simplex tableau; rows are dicts column -> coefficient."""

    def __init__(self):
        self.rows: list[dict] = []
        self.rhs: list = []
        self.basis: list[int] = []
        self.col_rows: dict[int, set] = {}
        self.obj: dict = {}
        self.obj_value = ZERO
        self.pivots = 0

    def add_row(self, row: dict, rhs, basic: int) -> None:
        idx = len(self.rows)
        self.rows.append(row)
        self.rhs.append(rhs)
        self.basis.append(basic)
        for col in row:
            self.col_rows.setdefault(col, set()).add(idx)

    def pivot(self, r: int, e: int) -> None:
        self.pivots += 1
        row_r = self.rows[r]
        piv = row_r[e]
        if piv != ONE:
            inv = ONE / piv
            for col in row_r:
                row_r[col] *= inv
            self.rhs[r] *= inv
        rhs_r = self.rhs[r]
        col_rows = self.col_rows
        for i in list(col_rows.get(e, ())):
            if i == r:
                continue
            row_i = self.rows[i]
            factor = row_i[e]
            for col, val in row_r.items():
                new = row_i.get(col, ZERO) - factor * val
                if new:
                    if col not in row_i:
                        col_rows.setdefault(col, set()).add(i)
                    row_i[col] = new
                elif col in row_i:
                    del row_i[col]
                    col_rows[col].discard(i)
            if rhs_r:
                self.rhs[i] -= factor * rhs_r
        d_e = self.obj.get(e)
        if d_e:
            obj = self.obj
            for col, val in row_r.items():
                new = obj.get(col, ZERO) - d_e * val
                if new:
                    obj[col] = new
                else:
                    obj.pop(col, None)
            self.obj_value += d_e * rhs_r
        self.basis[r] = e

    def drop_column(self, col: int) -> None:
        for i in self.col_rows.pop(col, set()):
            self.rows[i].pop(col, None)
        self.obj.pop(col, None)

    def run(self, allowed=None, pricing: str = "bland", stall_limit: int = 50) -> str:
        """Maximise the current objective row; returns OPTIMAL or UNBOUNDED."""
        degenerate_streak = 0
        while True:
            entering = None
            use_bland = pricing == "bland" or degenerate_streak >= stall_limit
            if use_bland:
                for col, d in self.obj.items():
                    if d > 0 and (allowed is None or col in allowed):
                        if entering is None or col < entering:
                            entering = col
            else:
                best = ZERO
                for col, d in self.obj.items():
                    if d > best and (allowed is None or col in allowed):
                        if entering is None or d > best or (d == best and col < entering):
                            best, entering = d, col
            if entering is None:
                return OPTIMAL
            leave_row = None
            best_ratio = None
            for i in self.col_rows.get(entering, ()):
                a = self.rows[i][entering]
                if a > 0:
                    ratio = self.rhs[i] / a
                    if (
                        best_ratio is None
                        or ratio < best_ratio
                        or (ratio == best_ratio and self.basis[i] < self.basis[leave_row])
                    ):
                        best_ratio, leave_row = ratio, i
            if leave_row is None:
                return UNBOUNDED
            degenerate_streak = degenerate_streak + 1 if best_ratio == 0 else 0
            self.pivot(leave_row, entering)


def _standardize(p: LpProblem):
    """Map every original variable to ``offset + sum(sign * column)``."""
    columns = 0
    mapping: dict = {}
    bound_rows = []
    for vid in p.variables():
        lo, hi = p.bounds.get(vid, (None, None))
        if lo is not None and hi is not None and lo > hi:
            return None
        if lo is not None:
            mapping[vid] = (lo, [(columns, ONE)])
            if hi is not None:
                bound_rows.append(({columns: ONE}, hi - lo))
            columns += 1
        elif hi is not None:
            mapping[vid] = (hi, [(columns, -ONE)])
            columns += 1
        else:
            mapping[vid] = (ZERO, [(columns, ONE), (columns + 1, -ONE)])
            columns += 2
    return columns, mapping, bound_rows


def _translate(expr: LinExpr, mapping) -> tuple[dict, object]:
    row: dict = {}
    const = expr.const
    for vid, coeff in expr.coeffs.items():
        offset, cols = mapping[vid]
        const += coeff * offset
        for col, sign in cols:
            new = row.get(col, ZERO) + coeff * sign
            if new:
                row[col] = new
            else:
                row.pop(col, None)
    return row, const


def _dedupe(constraints):
    seen = set()
    out = []
    for expr, rel in constraints:
        key = (expr, rel)
        if key in seen:
            continue
        seen.add(key)
        out.append((expr, rel))
    return out


def _build(p: LpProblem, pricing: str):
    std = _standardize(p)
    if std is None:
        return None
    n_cols, mapping, bound_rows = std
    tab = _Tableau()
    artificial = set()
    next_col = n_cols

    rows = []
    for row, bound in bound_rows:
        rows.append((row, "<=", bound))
    for expr, rel in _dedupe(p.constraints):
        row, const = _translate(expr, mapping)
        rhs = -const
        if rel == ">=":
            row = {k: -v for k, v in row.items()}
            rhs = -rhs
            rel = "<="
        rows.append((row, rel, rhs))

    for row, rel, rhs in rows:
        if not row:
            ok = (rhs >= 0) if rel == "<=" else (rhs == 0)
            if not ok:
                return "infeasible"
            continue
        row = dict(row)
        if rel == "<=":
            slack = next_col
            next_col += 1
            if rhs >= 0:
                row[slack] = ONE
                tab.add_row(row, rhs, slack)
                continue
            row = {k: -v for k, v in row.items()}
            row[slack] = -ONE
            rhs = -rhs
        elif rhs < 0:
            row = {k: -v for k, v in row.items()}
            rhs = -rhs
        art = next_col
        next_col += 1
        artificial.add(art)
        row[art] = ONE
        tab.add_row(row, rhs, art)
    return tab, mapping, artificial, n_cols


def _phase_one(tab: _Tableau, artificial: set, pricing: str) -> bool:
    if not artificial:
        return True
    tab.obj = {}
    tab.obj_value = ZERO
    for i, b in enumerate(tab.basis):
        if b in artificial:
            for col, val in tab.rows[i].items():
                if col not in artificial:
                    tab.obj[col] = tab.obj.get(col, ZERO) + val
            tab.obj_value -= tab.rhs[i]
    tab.obj = {k: v for k, v in tab.obj.items() if v}
    tab.run(pricing=pricing)
    if tab.obj_value < 0:
        return False
    # drive remaining artificials (at level zero) out of the basis
    for i, b in enumerate(tab.basis):
        if b not in artificial:
            continue
        candidates = [c for c in tab.rows[i] if c not in artificial]
        if candidates:
            tab.pivot(i, min(candidates))
        else:
            for col in list(tab.rows[i]):
                tab.col_rows[col].discard(i)
            tab.rows[i] = {}
            tab.rhs[i] = ZERO
            tab.basis[i] = -1
    for art in artificial:
        tab.drop_column(art)
    return True


def _extract(tab: _Tableau, mapping, p: LpProblem) -> dict:
    col_value: dict = {}
    for i, b in enumerate(tab.basis):
        if b >= 0:
            col_value[b] = tab.rhs[i]
    values = {}
    for vid, (offset, cols) in mapping.items():
        val = offset
        for col, sign in cols:
            val += sign * col_value.get(col, ZERO)
        values[vid] = val
    return values


def check_assignment(p: LpProblem, values: dict) -> list[str]:
    """Names of constraints or bounds violated by ``values`` (exact check)."""
    bad = []
    for vid, (lo, hi) in p.bounds.items():
        v = values.get(vid, ZERO)
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            bad.append(f"bound of {vid}")
    for i, (expr, rel) in enumerate(p.constraints):
        v = expr.evaluate({k: values.get(k, ZERO) for k in expr.coeffs})
        ok = v <= 0 if rel == "<=" else v >= 0 if rel == ">=" else v == 0
        if not ok:
            bad.append(f"c{i}")
    return bad


def _presolve(p: LpProblem):
    """Eliminate free variables by solving rows for them.

    A free variable ``v`` in row ``e rel 0`` is replaced everywhere by the
    solution of ``e + s = 0`` (``s >= 0`` a fresh slack for ``<=``, ``s <= 0``
    for ``>=``, none for ``==``) and the row disappears.  Rows with few
    entries and variables with few occurrences go first to limit fill-in.
    Returns the reduced problem and the definitions in elimination order,
    or None when the problem is unbounded.
    """
    rows = [[expr, rel] for expr, rel in _dedupe(p.constraints)]
    occurs: dict = {}
    for i, (expr, _) in enumerate(rows):
        for k in expr.coeffs:
            occurs.setdefault(k, set()).add(i)
    free = [v for v in p.variables() if p.bounds.get(v, (None, None)) == (None, None)]
    bounds = dict(p.bounds)
    objective = p.objective
    definitions = []
    alive = [True] * len(rows)
    pending = set(free)
    while pending:
        best = None
        for v in pending:
            where = occurs.get(v, ())
            for i in where:
                cost = (len(rows[i][0].coeffs) - 1) * (len(where) - 1) + (0 if rows[i][1] == "==" else 1)
                key = (cost, len(rows[i][0].coeffs), i, str(v))
                if best is None or key < best[0]:
                    best = (key, v, i)
        if best is None or best[0][0] > MAX_FILL:
            break
        _, v, i = best
        pending.discard(v)
        expr, rel = rows[i]
        if rel != "==":
            slack = ("__presolve_slack__", i)
            bounds[slack] = (ZERO, None) if rel == "<=" else (None, ZERO)
            expr = expr + LinExpr.var(slack)
        a = expr.coeffs[v]
        definition = LinExpr._raw({k: -c / a for k, c in expr.coeffs.items() if k != v}, -expr.const / a)
        definitions.append((v, definition))
        alive[i] = False
        for k in rows[i][0].coeffs:
            occurs[k].discard(i)
        for j in list(occurs.get(v, ())):
            old = rows[j][0]
            new = old.substitute(v, definition)
            for k in old.coeffs:
                if k not in new.coeffs:
                    occurs[k].discard(j)
            for k in new.coeffs:
                occurs.setdefault(k, set()).add(j)
            rows[j][0] = new
        objective = objective.substitute(v, definition)
    for v in pending:
        if objective.coeffs.get(v):
            return None
    gone = {v for v, _ in definitions} | pending
    reduced = LpProblem(
        {k: b for k, b in bounds.items() if k not in gone},
        [(expr, rel) for (expr, rel), ok in zip(rows, alive) if ok],
        objective,
        p.maximize,
    )
    return reduced, definitions


def solve(p: LpProblem, pricing: str = "bland", presolve: bool = True) -> LpOutcome:
    """Solve ``p`` exactly.

    ``pricing="bland"`` uses the smallest-index rule throughout.  The
    ``"dantzig"`` option picks the largest reduced cost and falls back to
    Bland's rule after a run of degenerate pivots, which keeps termination.
    With ``presolve`` free variables are eliminated first.
    """
    if presolve and any(p.bounds.get(v, (None, None)) == (None, None) for v in p.variables()):
        reduced = _presolve(p)
        if reduced is None:
            # a free variable with nonzero cost and no constraints
            return LpOutcome(UNBOUNDED if feasible(p) else INFEASIBLE)
        q, definitions = reduced
        out = _solve_core(q, pricing)
        if not out.optimal:
            return out
        values = dict(out.values)
        for v in p.variables():
            values.setdefault(v, ZERO)
        for v, definition in reversed(definitions):
            values[v] = definition.evaluate({k: values.get(k, ZERO) for k in definition.coeffs})
        values = {v: values[v] for v in p.variables()}
        return _checked(p, values, out.pivots)
    return _solve_core(p, pricing)


def _checked(p: LpProblem, values: dict, pivots: int) -> LpOutcome:
    bad = check_assignment(p, values)
    if bad:
        raise LpAssertionError(f"simplex optimum violates {bad[:5]}")
    objective = p.objective.evaluate({k: values.get(k, ZERO) for k in p.objective.coeffs})
    return LpOutcome(OPTIMAL, values, objective, pivots)


def _solve_core(p: LpProblem, pricing: str) -> LpOutcome:
    built = _build(p, pricing)
    if built is None or built == "infeasible":
        return LpOutcome(INFEASIBLE)
    tab, mapping, artificial, n_cols = built
    if not _phase_one(tab, artificial, pricing):
        return LpOutcome(INFEASIBLE, pivots=tab.pivots)

    sense = ONE if p.maximize else -ONE
    cost, const = _translate(p.objective * sense, mapping)
    obj = dict(cost)
    value = const
    for i, b in enumerate(tab.basis):
        cb = cost.get(b) if b >= 0 else None
        if cb:
            for col, val in tab.rows[i].items():
                new = obj.get(col, ZERO) - cb * val
                if new:
                    obj[col] = new
                else:
                    obj.pop(col, None)
            value += cb * tab.rhs[i]
    tab.obj = obj
    tab.obj_value = value
    status = tab.run(pricing=pricing)
    if status == UNBOUNDED:
        return LpOutcome(UNBOUNDED, pivots=tab.pivots)
    values = _extract(tab, mapping, p)
    bad = check_assignment(p, values)
    if bad:
        raise LpAssertionError(f"simplex optimum violates {bad[:5]}")
    objective = p.objective.evaluate({k: values.get(k, ZERO) for k in p.objective.coeffs})
    if objective != tab.obj_value * sense:
        raise LpAssertionError("objective bookkeeping disagrees with the recomputed value")
    return LpOutcome(OPTIMAL, values, objective, tab.pivots)


def feasible(p: LpProblem) -> bool:
    """Phase one only: is the constraint set nonempty?"""
    built = _build(p, "bland")
    if built is None or built == "infeasible":
        return False
    tab, _, artificial, _ = built
    return _phase_one(tab, artificial, "bland")


def polyhedron_feasible(poly) -> bool:
    """Satisfiability of a :class:`~lexterm.linear.Polyhedron` with strict parts weakened."""
    if poly.is_trivially_false():
        return False
    if not poly.constraints:
        return True
    prob = LpProblem()
    for c in poly.constraints:
        prob.add_constraint(c.expr, "<=")
    return feasible(prob)


def polyhedron_nonempty_exact(poly) -> bool:
    """Satisfiability honouring strict inequalities.

    Maximises a slack ``t <= 1`` with ``e + t <= 0`` for every strict row; the
    strict system is feasible iff the optimum is positive.
    """
    if not poly.has_strict():
        return polyhedron_feasible(poly)
    if poly.is_trivially_false():
        return False
    prob = LpProblem()
    slack = ("__slack__",)
    prob.add_var(slack, None, 1)
    for c in poly.constraints:
        prob.add_constraint(c.expr + LinExpr.var(slack) if c.strict else c.expr, "<=")
    prob.objective = LinExpr.var(slack)
    out = solve(prob)
    return out.optimal and out.objective > 0


def maximize_over(poly, expr: LinExpr):
    """Supremum of ``expr`` on ``poly`` (weakened); None when unbounded, False when empty."""
    prob = LpProblem()
    for c in poly.weakened().constraints:
        prob.add_constraint(c.expr, "<=")
    prob.objective = expr
    out = solve(prob)
    if out.status == INFEASIBLE:
        return False
    if out.status == UNBOUNDED:
        return None
    return out.objective

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from lexterm.linear import LinConstraint, LinExpr, Polyhedron
from lexterm.lp import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LpProblem,
    check_assignment,
    maximize_over,
    polyhedron_nonempty_exact,
    solve,
)
from lexterm.rational import Q


def test_textbook_problem():
    # max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18, x, y >= 0  -> 36 at (2, 6)
    p = LpProblem()
    p.add_var("x", 0, None)
    p.add_var("y", 0, None)
    p.add_constraint(LinExpr({"x": 1}, -4), "<=")
    p.add_constraint(LinExpr({"y": 2}, -12), "<=")
    p.add_constraint(LinExpr({"x": 3, "y": 2}, -18), "<=")
    p.objective = LinExpr({"x": 3, "y": 5})
    out = solve(p)
    assert out.status == OPTIMAL and out.objective == 36
    assert out.values == {"x": 2, "y": 6}


def test_infeasible_and_unbounded():
    p = LpProblem()
    p.add_var("x", 0, 1)
    p.add_constraint(LinExpr({"x": 1}, -2), ">=")
    assert solve(p).status == INFEASIBLE
    q = LpProblem()
    q.add_var("x", 0, None)
    q.objective = LinExpr({"x": 1})
    assert solve(q).status == UNBOUNDED


def test_free_variables_and_equalities():
    p = LpProblem()
    p.add_constraint(LinExpr({"a": 1, "b": 1}, -1), "==")
    p.add_constraint(LinExpr({"a": 1, "b": -1}), "<=")
    p.add_var("b", None, 3)
    p.objective = LinExpr({"a": 1})
    out = solve(p)
    assert out.optimal and out.objective == Q(1, 2)


def test_presolve_matches_plain():
    p = LpProblem()
    p.add_constraint(LinExpr({"u": 1, "v": 2, "w": -1}, -3), "<=")
    p.add_constraint(LinExpr({"u": -1, "v": 1}, 1), "<=")
    p.add_constraint(LinExpr({"u": 1}, -6), "<=")
    p.add_var("w", 0, 5)
    p.objective = LinExpr({"v": 1, "u": 1})
    a, b = solve(p, presolve=True), solve(p, presolve=False)
    assert a.status == b.status == OPTIMAL and a.objective == b.objective


def test_degenerate_cycling_example_terminates():
    # Beale's example cycles under naive largest-coefficient pricing.
    p = LpProblem()
    for v in "abcd":
        p.add_var(v, 0, None)
    p.add_constraint(LinExpr({"a": Q(1, 4), "b": -8, "c": -1, "d": 9}), "<=")
    p.add_constraint(LinExpr({"a": Q(1, 2), "b": -12, "c": Q(-1, 2), "d": 3}), "<=")
    p.add_constraint(LinExpr({"c": 1}, -1), "<=")
    p.objective = LinExpr({"a": Q(3, 4), "b": -20, "c": Q(1, 2), "d": -6})
    for pricing in ("bland", "dantzig"):
        out = solve(p, pricing=pricing)
        assert out.optimal and out.objective == Q(5, 4)


def test_strict_nonemptiness():
    x = LinExpr.var("x")
    open_interval = Polyhedron.of(LinConstraint(x * -1, True), LinConstraint(x - 1, True))
    point = Polyhedron.of(LinConstraint(x * -1, True), LinConstraint(x, False))
    assert polyhedron_nonempty_exact(open_interval)
    assert not polyhedron_nonempty_exact(point)


def test_maximize_over_reports_empty_and_unbounded():
    x = LinExpr.var("x")
    assert maximize_over(Polyhedron.of(LinConstraint(x - 1), LinConstraint(2 - x)), x) is False
    assert maximize_over(Polyhedron.of(LinConstraint(-x)), x) is None


coef = st.integers(-5, 5)


@st.composite
def random_lps(draw):
    n = draw(st.integers(1, 4))
    m = draw(st.integers(1, 5))
    names = [f"v{i}" for i in range(n)]
    p = LpProblem()
    bounds = []
    for v in names:
        kind = draw(st.sampled_from(["nonneg", "free", "box"]))
        lo, hi = {"nonneg": (0, None), "free": (None, None), "box": (-3, 3)}[kind]
        p.add_var(v, lo, hi)
        bounds.append((lo, hi))
    A, b, eq = [], [], []
    for _ in range(m):
        row = [draw(coef) for _ in names]
        rhs = draw(st.integers(-6, 6))
        rel = draw(st.sampled_from(["<=", ">=", "=="]))
        p.add_constraint(LinExpr(dict(zip(names, row)), -rhs), rel)
        A.append((row, rhs, rel))
    obj = [draw(coef) for _ in names]
    p.objective = LinExpr(dict(zip(names, obj)))
    p.maximize = draw(st.booleans())
    return p, names, bounds, A, obj


@settings(max_examples=400, deadline=None)
@given(random_lps(), st.sampled_from(["bland", "dantzig"]))
def test_random_lps_against_scipy(case, pricing):
    """Exact optimum agrees with HiGHS; the internal exact re-check never fires."""
    p, names, bounds, rows, obj = case
    out = solve(p, pricing=pricing)  # raises LpAssertionError on an inexact optimum
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for row, rhs, rel in rows:
        if rel == "<=":
            A_ub.append(row), b_ub.append(rhs)
        elif rel == ">=":
            A_ub.append([-a for a in row]), b_ub.append(-rhs)
        else:
            A_eq.append(row), b_eq.append(rhs)
    sign = -1 if p.maximize else 1
    system = dict(
        A_ub=np.array(A_ub, dtype=float) if A_ub else None,
        b_ub=np.array(b_ub, dtype=float) if b_ub else None,
        A_eq=np.array(A_eq, dtype=float) if A_eq else None,
        b_eq=np.array(b_eq, dtype=float) if b_eq else None,
        bounds=bounds,
        method="highs",
    )
    res = linprog(sign * np.array(obj, dtype=float), **system)
    expected = {0: OPTIMAL, 2: INFEASIBLE, 3: UNBOUNDED}[res.status]
    if res.status == 2 and linprog(np.zeros(len(obj)), **system).status == 0:
        # HiGHS presolve may report an unbounded problem as infeasible
        expected = UNBOUNDED
    assert out.status == expected
    if out.optimal:
        assert not check_assignment(p, out.values)
        assert abs(float(out.objective) - sign * res.fun) < 1e-7

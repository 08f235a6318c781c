import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from lexterm.linear import (
    LinConstraint,
    LinExpr,
    Polyhedron,
    SymAffine,
    Template,
    UnknownPool,
    entails,
    negate_assertion,
)
from lexterm.lp import LpProblem, feasible, maximize_over, polyhedron_feasible, solve
from lexterm.rational import Q


def system_lp(system, lp=None):
    lp = lp or LpProblem()
    for m in system.multipliers:
        lp.add_var(m, 0, None)
    for row in system.rows:
        lp.add_constraint(row.expr, row.relation)
    return lp


def test_linexpr_arithmetic():
    e = LinExpr({"x": 2, "y": -1}, 3)
    assert (e + e).coeff("x") == 4
    assert (e * Q(1, 2)).const == Q(3, 2)
    assert e.substitute("y", LinExpr({"x": 1})).coeff("x") == 1
    assert e.evaluate({"x": 1, "y": 5}) == 0


def test_constraint_negation_is_strict():
    c = LinConstraint.le(LinExpr.var("x"), LinExpr.constant(3))
    n = c.negate()
    assert n.strict and n.holds({"x": 4}) and not n.holds({"x": 3})


def test_negate_assertion_gives_disjunction():
    p = Polyhedron.of(LinConstraint.ge(LinExpr.var("x"), LinExpr.constant(0)), LinConstraint.ge(LinExpr.var("y"), LinExpr.constant(0)))
    assert len(negate_assertion(p).disjuncts) == 2


def test_entails_simple_bound():
    # x >= 1 entails 2 - 2x <= 0 but not 3 - 2x <= 0
    prem = Polyhedron.of(LinConstraint.ge(LinExpr.var("x"), LinExpr.constant(1)))
    ok = entails(prem, SymAffine.concrete(LinExpr({"x": -2}, 2)), UnknownPool())
    bad = entails(prem, SymAffine.concrete(LinExpr({"x": -2}, 3)), UnknownPool())
    assert feasible(system_lp(ok)) and not feasible(system_lp(bad))


def test_entails_template_synthesizes_lower_bound():
    # find a*x + b with a*x + b >= 0 on x >= 0 and a >= 1: any solution must be sound
    pool = UnknownPool()
    tpl = Template.build([0], ["x"], pool)
    prem = Polyhedron.of(LinConstraint.ge(LinExpr.var("x"), LinExpr.constant(0)))
    lp = system_lp(entails(prem, tpl.at(0).scale(-1), pool))
    a = tpl.coeff_ids[0]["x"]
    lp.add_constraint(LinExpr.var(a) - 1, ">=")
    lp.objective = LinExpr.var(tpl.const_ids[0])
    lp.maximize = False
    out = solve(lp)
    assert out.optimal
    eta = tpl.instantiate(out.values)[0]
    assert eta.coeff("x") >= 1 and eta.const == 0


small = st.integers(-4, 4)


@st.composite
def instances(draw):
    n_cons = draw(st.integers(1, 4))
    cons = []
    for _ in range(n_cons):
        a, b, c = draw(small), draw(small), draw(small)
        assume(a or b)
        cons.append(LinExpr({"x": a, "y": b}, c))
    target = LinExpr({"x": draw(small), "y": draw(small)}, draw(small))
    return cons, target


def scipy_max(cons, target):
    A = np.array([[float(e.coeff("x")), float(e.coeff("y"))] for e in cons])
    b = np.array([-float(e.const) for e in cons])
    c = -np.array([float(target.coeff("x")), float(target.coeff("y"))])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * 2, method="highs")
    if res.status == 2:
        return "infeasible"
    if res.status == 3:
        return "unbounded"
    return -res.fun + float(target.const)


@settings(max_examples=1000, deadline=None)
@given(instances())
def test_farkas_sound_and_complete(inst):
    """Farkas system feasible iff target <= 0 on the (nonempty) premise."""
    cons, target = inst
    prem = Polyhedron(tuple(LinConstraint(e) for e in cons))
    assume(polyhedron_feasible(prem))
    system = entails(prem, SymAffine.concrete(target), UnknownPool())
    witnessed = feasible(system_lp(system))
    top = maximize_over(prem, target)
    holds = top is not None and top is not False and top <= 0
    assert witnessed == holds
    ref = scipy_max(cons, target)
    if ref == "unbounded":
        assert top is None
    elif top is not None:
        assert abs(float(top) - ref) < 1e-6


@settings(max_examples=200, deadline=None)
@given(instances(), st.booleans())
def test_farkas_without_elimination_agrees(inst, eliminate):
    cons, target = inst
    prem = Polyhedron(tuple(LinConstraint(e) for e in cons))
    assume(polyhedron_feasible(prem))
    a = feasible(system_lp(entails(prem, SymAffine.concrete(target), UnknownPool(), eliminate=eliminate)))
    b = feasible(system_lp(entails(prem, SymAffine.concrete(target), UnknownPool(), eliminate=not eliminate)))
    assert a == b


def test_irrelevant_constraints_are_pruned():
    prem = Polyhedron.of(
        LinConstraint.ge(LinExpr.var("x"), LinExpr.constant(0)),
        LinConstraint.ge(LinExpr({"y": 1, "z": 1}), LinExpr.constant(0)),
        LinConstraint.le(LinExpr({"y": 1, "z": -1}), LinExpr.constant(2)),
    )
    system = entails(prem, SymAffine.concrete(LinExpr({"x": -1})), UnknownPool())
    assert system.multipliers == []
    assert feasible(system_lp(system))

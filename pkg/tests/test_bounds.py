import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexterm.bounds import NoEci, bound_value, eci_holds, make_bound, synthesize_eci
from lexterm.frontend import parse_expression
from lexterm.lexrsm import LexRsmMap, SynthesisConfig, synthesize
from lexterm.linear import LinExpr, to_q
from lexterm.pcfg import gen_transitions
from lexterm.sim import estimate

from conftest import load


def _bound(name):
    _, g, inv = load(name)
    m = synthesize(g, inv)
    return g, inv, m, synthesize_eci(g, inv, m)


def test_biased_walk_bound_is_expected_steps():
    g, _, _, cert = _bound("biased_walk")
    assert cert.increase == [0] and bound_value(cert, {}, g) == 62


def test_two_loops_bound_dominates_simulation():
    g, _, _, cert = _bound("two_loops")
    assert cert.expression.format(g.variables) == "2*x + 2*y + 2"
    assert bound_value(cert, {"x": 5, "y": 7}, g) == 26
    est = estimate(g, {"x": 5, "y": 7}, trials=2000, seed=3)
    assert est.mean_steps <= 26


@pytest.mark.parametrize("name,component", [("double_then_countdown", 2), ("nested_uniform", 2)])
def test_unbounded_increase_is_reported(name, component):
    _, _, _, res = _bound(name)
    assert isinstance(res, NoEci) and res.component == component and res.transition is not None


def test_bound_requires_unit_epsilon():
    _, g, inv = load("biased_walk")
    m = synthesize(g, inv, SynthesisConfig(epsilon=2))
    with pytest.raises(ValueError):
        synthesize_eci(g, inv, m)


def test_bound_rejects_points_outside_init():
    g, _, _, cert = _bound("two_loops")
    with pytest.raises(ValueError):
        bound_value(cert, {"x": -1, "y": 0}, g)


def test_minimal_increase():
    g, inv, m, cert = _bound("two_loops")
    assert eci_holds(g, inv, m, cert.increase)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=2, max_size=2), st.integers(0, 10), st.integers(0, 10))
def test_product_bound_never_exceeds_uniform_bound(incs, a, b):
    # synthetic two-component map at a single location
    _, g, _ = load("two_loops")
    comps = [{g.init: _lin(a)}, {g.init: _lin(b)}]
    cert = make_bound(g, LexRsmMap(comps, {}), [to_q(c) for c in incs])
    assert cert.product_expression.evaluate({}) <= cert.expression.evaluate({})
    assert cert.expression.evaluate({}) == a * (max(incs) + 1) + b


def _lin(c):
    return LinExpr({}, to_q(c))


def test_two_component_map_has_zero_increase():
    # x-based then y-based; y never changes in the first loop
    _, g, inv = load("two_loops")
    first = {0: "2*x + 1", 1: "2*x", 2: "0", 3: "0", 4: "0"}
    second = {0: "2*y + 1", 1: "2*y + 1", 2: "2*y + 1", 3: "2*y", 4: "0"}
    comps = [{k: parse_expression(v) for k, v in c.items()} for c in (first, second)]
    levels = {gt.gid: 1 if gt.source in (0, 1) else 2 for gt in gen_transitions(g)}
    m = LexRsmMap(comps, levels)
    cert = synthesize_eci(g, inv, m)
    assert cert.increase == [0, 0]
    assert bound_value(cert, {"x": 5, "y": 7}, g) == 26

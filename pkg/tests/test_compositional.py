import pytest

from lexterm.compositional import (
    NoNcsm,
    decompose,
    pointwise_ncsm,
    prove_compositional,
    synthesize_ncsm,
    verify_ncsm,
)

from conftest import load

# (head, depth, expression at head) per certified loop, innermost first
EXPECTED = {
    "biased_walk": [(1, 0, "6*x + 1")],
    "double_then_countdown": [(2, 0, "6*c + 1"), (6, 0, "2*x + 3")],
    "reset_or_double": [(2, 1, "10*c + 1"), (0, 0, "3*x + 4")],
    "reset_or_grow": [(2, 1, "10*c + 1"), (0, 0, "3*x + 4")],
    "nested_uniform": [(2, 1, "2*y + 5"), (0, 0, "3*x + 4")],
    "triple_nested": [(3, 2, "3*z + 5"), (1, 1, "3*y + 4"), (0, 0, "2*x + 9")],
    "two_loops": [(0, 0, "2*x + 1"), (2, 0, "2*y + 1")],
}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_loop_maps(name):
    _, g, inv = load(name)
    res = prove_compositional(g, inv)
    assert res.proved and not res.failures
    got = [(c.head, c.depth, c.map.at(0, c.head).format(g.variables)) for c in res.certificates]
    assert got == EXPECTED[name]
    for cert in res.certificates:
        assert verify_ncsm(g, inv, cert).ok
        assert pointwise_ncsm(g, inv, cert, per_transition=40).ok


def test_inner_loops_are_certified_first():
    _, g, inv = load("triple_nested")
    res = prove_compositional(g, inv)
    depths = [c.depth for c in res.certificates]
    assert depths == sorted(depths, reverse=True)
    outer = res.certificates[-1]
    assert sorted(outer.certified_after) == sorted(c.loop_id for c in res.certificates[:-1])
    rows = res.ledger(g)
    assert rows[-1]["nested"] and rows[0]["nested"] == []


def test_decomposition_partitions_loop():
    _, g, _ = load("reset_or_double")
    outer = decompose(g, 0)
    inner = decompose(g, 2)
    assert inner.locations < outer.locations
    assert outer.slice.isdisjoint(inner.locations - {inner.exit_location})
    assert inner.head in inner.slice


def test_divergent_loop_fails():
    _, g, inv = load("divergent")
    res = prove_compositional(g, inv)
    assert not res.proved and isinstance(res.failures[0], NoNcsm)


def test_wrong_epsilon_rejects_loop_map():
    _, g, inv = load("reset_or_double")
    cert = synthesize_ncsm(g, inv, decompose(g, 2))
    assert verify_ncsm(g, inv, cert).ok
    assert not verify_ncsm(g, inv, cert, epsilon=100).ok

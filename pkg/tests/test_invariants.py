import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexterm.frontend import parse_assertion
from lexterm.invariants import (
    check_inductive,
    check_invariants_empirically,
    default_invariants,
    format_sidecar,
    load_annotations,
    parse_sidecar,
)

from conftest import CORPUS, build, load

NAMES = sorted(p.stem for p in CORPUS.glob("*.app"))


@pytest.mark.parametrize("name", NAMES)
def test_generated_invariants_are_inductive_and_sound(name):
    _, g, inv = load(name)
    assert check_inductive(g, inv) == []
    assert check_invariants_empirically(g, inv, trials=20, steps=400).ok


def test_biased_walk_values():
    _, g, inv = load("biased_walk")
    assert inv[1] == parse_assertion("x >= 0")
    assert inv[2].holds({"x": 1}) and not inv[2].holds({"x": 0})


def test_double_then_countdown_annotation_is_used():
    _, g, inv = load("double_then_countdown")
    assert inv.provenance[2] == "annotation"
    assert inv[2].holds({"x": 1, "c": 0}) and not inv[2].holds({"x": 0, "c": 1})
    # second loop head is reached with x = -1
    assert inv[6].holds({"x": -1, "c": 0})


def test_relational_invariant_triple_nested():
    _, g, inv = load("triple_nested")
    assert inv[3].holds({"x": 4, "y": 0, "z": 4})
    assert not inv[3].holds({"x": 4, "y": 0, "z": 3})


def test_sidecar_round_trip_and_override():
    ast, g, inv = load("biased_walk")
    text = format_sidecar(inv, g.variables)
    parsed = parse_sidecar(text, g)
    assert all(parsed[lid] == poly for lid, poly in inv.items())
    over = load_annotations(ast, g, "# tighter head\nloc 1: x >= 0 and x <= 11\n")
    assert over.provenance[1] == "sidecar" and not over[1].holds({"x": 12})


@pytest.mark.parametrize("bad", ["loc 99: x >= 0", "loc 1: q >= 0", "location 1: x >= 0", "loc 1: x >= 0 or x <= 1"])
def test_sidecar_errors(bad):
    _, g, _ = load("biased_walk")
    with pytest.raises(ValueError):
        parse_sidecar(bad, g)


def test_wrong_invariant_is_caught():
    ast, g, _ = load("biased_walk")
    inv = load_annotations(ast, g, "loc 1: x >= 5\n")
    assert check_inductive(g, inv)
    assert not check_invariants_empirically(g, inv, trials=5, steps=200).ok


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5), st.integers(1, 3), st.integers(-2, 2), st.sampled_from(["1/2", "3/4", "1/3"]))
def test_random_loops_invariants_hold(lo, step, up, p):
    src = (
        f"@init(x >= {lo} and y >= 0)\n"
        f"while x >= 1 do\n"
        f"  if prob({p}) then x := x - {step} else x := x + {up} fi;\n"
        f"  y := y + 1\n"
        f"od"
    )
    _, g, inv = build(src)
    assert check_inductive(g, inv) == []
    assert check_invariants_empirically(g, inv, trials=10, steps=200, seed=lo).ok

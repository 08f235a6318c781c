from fractions import Fraction

from hypothesis import given, settings
from hypothesis import strategies as st

from lexterm.frontend import parse_predicate, parse_program
from lexterm.pcfg import A, D, NB, PB, build_pcfg, disjoint_split, enabled, gen_transitions, normalize_guards, validate

from conftest import load


def kinds(g):
    return [loc.kind for loc in g.locations]


def test_nested_uniform_numbering():
    _, g, _ = load("nested_uniform")
    # outer head, y := x, inner head, sampling assignment, x := x - 1, terminal
    assert kinds(g) == [D, A, D, A, A, D]
    assert g.term == 5 and g.init == 0
    assert [info.head for info in g.loops] == [0, 2]
    assert g.loops[1].parent == 0 and g.loops[1].depth == g.loops[0].depth + 1


def test_double_then_countdown_shape():
    _, g, _ = load("double_then_countdown")
    assert kinds(g) == [A, A, D, PB, A, A, D, A, D]
    pb = g.outgoing(3)
    assert sorted(t.prob for t in pb) == [Fraction(1, 2), Fraction(1, 2)]
    assert validate(g) == []


def test_terminal_self_loop_and_gen_transitions():
    _, g, _ = load("biased_walk")
    term = g.outgoing(g.term)
    assert len(term) == 1 and term[0].dst == g.term
    gts = gen_transitions(g)
    assert all(gt.source != g.term for gt in gts)
    bundles = [gt for gt in gts if gt.is_bundle]
    assert len(bundles) == 1 and len(bundles[0].transitions) == 2


def test_nondeterministic_branch():
    g = normalize_guards(build_pcfg(parse_program("x := 0; if * then x := 1 else x := 2 fi")))
    assert NB in kinds(g)
    nb = [loc.lid for loc in g.locations if loc.kind == NB][0]
    assert len(gen_transitions(g)) >= 3 and len(g.outgoing(nb)) == 2


def test_dot_and_dump():
    _, g, _ = load("double_then_countdown")
    assert g.to_dot().startswith("digraph")
    assert "PB" in g.dump()


small = st.integers(-3, 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(small, small, small), min_size=1, max_size=3), st.lists(st.tuples(small, small), min_size=4, max_size=4))
def test_disjoint_split_partitions(atoms, points):
    """Pieces are pairwise disjoint and cover exactly the original guard."""
    text = " or ".join(f"{a}*x + {b}*y >= {c}" for a, b, c in atoms)
    guard = parse_predicate(text)
    pieces = disjoint_split(guard)
    for px, py in points:
        val = {"x": Fraction(px, 2), "y": Fraction(py, 3)}
        hits = sum(p.holds(val) for p in pieces)
        assert hits == (1 if guard.holds(val) else 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(-10, 10), st.integers(-10, 10))
def test_deterministic_locations_have_one_enabled_transition(x, y):
    _, g, _ = load("triple_nested")
    val = {"x": x, "y": y, "z": 0}
    for loc in g.locations:
        if loc.kind == D and loc.lid != g.term:
            assert len(enabled(g, loc.lid, val)) == 1

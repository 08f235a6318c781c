import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexterm.cli import GeneratorSpec, generate_program
from lexterm.frontend import (
    Assign,
    If,
    Interval,
    ParseError,
    Prob,
    Star,
    While,
    parse_assertion,
    parse_expression,
    parse_predicate,
    parse_program,
    pretty_print,
    walk,
)
from lexterm.rational import Q

from conftest import CORPUS


def test_assignment_and_loop():
    ast = parse_program("x := 10; while x >= 1 do x := x - 1 od")
    assert ast.variables == ("x",)
    loops = [s for s in walk(ast.body) if isinstance(s, While)]
    assert len(loops) == 1


def test_branch_kinds():
    ast = parse_program("if * then x := 1 else x := 2 fi; if prob(1/3) then x := 0 else skip fi; if x >= 1 then skip else skip fi")
    guards = [s.guard for s in walk(ast.body) if isinstance(s, If)]
    assert isinstance(guards[0], Star)
    assert isinstance(guards[1], Prob) and guards[1].p == Q(1, 3)
    assert not isinstance(guards[2], (Star, Prob))


def test_sample_and_ndet_terms():
    ast = parse_program("x := x + sample(uniform(-3, 1)); y := ndet([0, inf])")
    assigns = [s for s in walk(ast.body) if isinstance(s, Assign)]
    assert assigns[0].noise.mean == -1
    assert isinstance(assigns[1].noise, Interval) and assigns[1].noise.hi is None


def test_implicit_multiplication_and_fractions():
    e = parse_expression("6c + 2")
    assert e.coeff("c") == 6 and e.const == 2
    assert parse_expression("3/2*(x - 1)").coeff("x") == Q(3, 2)


def test_predicates_are_dnf():
    p = parse_predicate("not (x >= 1 and y >= 1)")
    assert len(p.disjuncts) == 2


def test_assertion_rejects_disjunction():
    with pytest.raises(ParseError):
        parse_assertion("x >= 1 or y >= 1")


@pytest.mark.parametrize(
    "bad",
    ["x := ", "while x >= 1 do x := x - 1", "x := x * y", "if prob(2) then skip else skip fi", "@invariant(x >= 0) x := 1"],
)
def test_parse_errors_have_positions(bad):
    with pytest.raises((ParseError, ValueError)) as info:
        parse_program(bad)
    assert str(info.value)


def test_nonlinear_rejected():
    with pytest.raises(ParseError):
        parse_program("x := x * x")


@pytest.mark.parametrize("path", sorted(CORPUS.glob("*.app")), ids=lambda p: p.name)
def test_round_trip_corpus(path):
    ast = parse_program(path.read_text())
    text = pretty_print(ast)
    again = parse_program(text)
    assert again == ast
    assert pretty_print(again) == text


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_round_trip_generated(n):
    ast = parse_program(generate_program(GeneratorSpec(n, seed=n)))
    assert parse_program(pretty_print(ast)) == ast


coef = st.integers(-9, 9)


@settings(max_examples=60, deadline=None)
@given(a=coef, b=coef, c=coef, k=st.integers(1, 5))
def test_expression_round_trip(a, b, c, k):
    src = f"@init(y >= 0)\nx := {a}*x + {b}*y + {c}; while x >= {k} do x := x - 1 od"
    ast = parse_program(src)
    assert parse_program(pretty_print(ast)) == ast

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexterm.lexrsm import (
    CertificateError,
    LexRsmMap,
    NoLinLexRsm,
    SynthesisConfig,
    certificate_json,
    is_ranked_pointwise,
    load_certificate,
    pointwise_check,
    synthesize,
    verify_symbolically,
)
from lexterm.linear import to_q
from lexterm.pcfg import gen_transitions

from conftest import CORPUS, build, load

DIMENSIONS = {"biased_walk": 1, "double_then_countdown": 2, "reset_or_double": 1, "reset_or_grow": 1, "nested_uniform": 2, "triple_nested": 1, "two_loops": 1}


@pytest.mark.parametrize("name,dim", sorted(DIMENSIONS.items()))
def test_synthesized_maps_are_valid(name, dim):
    _, g, inv = load(name)
    m = synthesize(g, inv)
    assert isinstance(m, LexRsmMap) and m.dimension == dim
    assert verify_symbolically(g, inv, m).ok
    assert pointwise_check(g, inv, m, per_transition=30).ok


def test_known_values_at_init():
    _, g, inv = load("biased_walk")
    assert synthesize(g, inv).at(0, g.init).evaluate({"x": 0}) == 62
    _, g, inv = load("double_then_countdown")
    m = synthesize(g, inv)
    assert [m.at(j, g.init).evaluate({"x": 0, "c": 0}) for j in range(2)] == [10, 0]


def test_divergent_has_no_map():
    _, g, inv = load("divergent")
    res = synthesize(g, inv)
    assert isinstance(res, NoLinLexRsm) and res.unranked


def test_dimension_limit():
    _, g, inv = load("double_then_countdown")
    assert isinstance(synthesize(g, inv, SynthesisConfig(max_dimension=1)), NoLinLexRsm)


def test_epsilon_must_be_positive():
    with pytest.raises(ValueError):
        SynthesisConfig(epsilon=0)


def _double_then_countdown_cert():
    ast, g, _ = load("double_then_countdown")
    doc = json.loads((CORPUS / "double_then_countdown.cert.json").read_text())
    m, inv = load_certificate(doc, ast, g)
    return ast, g, inv, m, doc


def test_shipped_certificate_verifies():
    _, g, inv, m, _ = _double_then_countdown_cert()
    assert m.dimension == 2
    assert verify_symbolically(g, inv, m).ok
    assert pointwise_check(g, inv, m, per_transition=40).ok


def test_certificate_rejected_with_larger_epsilon():
    _, g, inv, m, _ = _double_then_countdown_cert()
    verdict = verify_symbolically(g, inv, m, epsilon=2)
    assert not verdict.ok
    assert {f.clause for f in verdict.failures} <= {"rank clause violated", "unaffected clause violated"}
    # the probabilistic branch decreases the first component by exactly 1 when c = 1
    bundle = next(gt for gt in gen_transitions(g) if gt.source == 3)
    assert is_ranked_pointwise(m, g, bundle, {"x": to_q(3), "c": to_q(1)}).ok
    assert not is_ranked_pointwise(m, g, bundle, {"x": to_q(3), "c": to_q(1)}, epsilon=2).ok


def test_tampered_certificate_fails():
    _, g, inv, m, doc = _double_then_countdown_cert()
    ast = load("double_then_countdown")[0]
    doc = json.loads(json.dumps(doc))
    doc["components"][1]["l6"] = "x + 3"
    m2, inv2 = load_certificate(doc, ast, g)
    assert not verify_symbolically(g, inv2, m2).ok


def test_certificate_errors():
    _, _, _, _, doc = _double_then_countdown_cert()
    ast1, g1, _ = load("biased_walk")
    with pytest.raises(CertificateError, match="digest"):
        load_certificate(doc, ast1, g1)
    ast, g, _ = load("double_then_countdown")
    with pytest.raises(CertificateError):
        load_certificate({**doc, "format": "other"}, ast, g)
    with pytest.raises(CertificateError):
        load_certificate({k: v for k, v in doc.items() if k != "components"}, ast, g)


def test_certificate_round_trip():
    for name in DIMENSIONS:
        ast, g, inv = load(name)
        m = synthesize(g, inv)
        m2, inv2 = load_certificate(json.loads(json.dumps(certificate_json(ast, g, inv, m))), ast, g)
        assert m2.components == m.components and m2.levels == m.levels
        assert verify_symbolically(g, inv2, m2).ok


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.sampled_from(["3/4", "2/3", "1/2"]))
def test_synthesized_maps_hold_pointwise(step, up, p):
    # drift is p*step - (1-p)*up; keep it positive so the loop terminates
    src = f"@init(x >= 0)\nwhile x >= 1 do if prob({p}) then x := x - {step} else x := x + {up} fi od"
    _, g, inv = build(src)
    res = synthesize(g, inv)
    p_num, p_den = map(int, p.split("/"))
    drift = p_num * step - (p_den - p_num) * up
    if drift > 0:
        assert isinstance(res, LexRsmMap)
        assert verify_symbolically(g, inv, res).ok
        assert pointwise_check(g, inv, res, per_transition=15).ok
    else:
        assert isinstance(res, NoLinLexRsm)

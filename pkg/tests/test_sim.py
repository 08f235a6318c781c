import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexterm.frontend import parse_assertion
from lexterm.sim import (
    SchedulerPolicy,
    SimulationError,
    estimate,
    initial_valuations,
    run,
    sample_points,
    trace,
    trial_seed,
)

from conftest import build, load


def test_runs_are_deterministic_per_seed():
    _, g, _ = load("biased_walk")
    a = run(g, {}, seed=7, keep_trace=True)
    b = run(g, {}, seed=7, keep_trace=True)
    assert a == b and a.terminated
    assert a.trace == list(trace(g, {}, cap=10**6, seed=7))


def test_trial_seeds_are_distinct():
    seeds = {trial_seed(3, k) for k in range(2000)}
    assert len(seeds) == 2000


def test_workers_do_not_change_results():
    _, g, _ = load("biased_walk")
    one = estimate(g, {}, trials=60, seed=5, keep_per_trial=True)
    two = estimate(g, {}, trials=60, seed=5, keep_per_trial=True, workers=2)
    assert one.per_trial == two.per_trial


def test_biased_walk_iterations_match_drift():
    # drift -1/2 per iteration from x = 10 gives 20 iterations in expectation
    _, g, _ = load("biased_walk")
    est = estimate(g, {}, trials=4000, seed=1)
    assert est.frequency == 1.0
    assert abs(est.mean_iterations - 20) <= 3 * est.iterations_half_width + 0.2
    assert abs(est.mean_steps - 62) <= 3 * est.steps_half_width + 0.5


def test_cap_stops_divergent_runs():
    _, g, _ = load("divergent")
    res = run(g, {v: 1 for v in g.variables}, cap=500, seed=0)
    assert not res.terminated and res.steps == 500


def test_scheduler_policies():
    src = "x := 0; while x <= 5 do if * then x := x + 1 else x := x + 2 fi od"
    _, g, _ = build(src)
    for kind in ("uniform", "adversarial"):
        assert run(g, {}, SchedulerPolicy(kind, seed=3), seed=1).terminated
    slow = run(g, {}, SchedulerPolicy("scripted", script=[0] * 6), seed=0)
    fast = run(g, {}, SchedulerPolicy("scripted", script=[1] * 3), seed=0)
    assert slow.iterations == 6 and fast.iterations == 3
    with pytest.raises(SimulationError):
        run(g, {}, SchedulerPolicy("scripted", script=[0]), seed=0)
    with pytest.raises(ValueError):
        SchedulerPolicy("greedy")


def test_initial_valuations():
    _, g, _ = load("reset_or_double")
    pts = initial_valuations(g, count=3)
    assert pts and all(g.init_poly.holds(p) for p in pts)
    assert initial_valuations(g, {"x": 4}) == [{"x": 4, "c": 0}]


@settings(max_examples=40, deadline=None)
@given(st.integers(-5, 5), st.integers(0, 8), st.integers(0, 10**6))
def test_box_sampler_stays_inside(lo, width, seed):
    poly = parse_assertion(f"x >= {lo} and x <= {lo + width} and y >= 0")
    pts = sample_points(poly, ["x", "y"], 30, random.Random(seed))
    assert pts and all(poly.holds(p) for p in pts)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_general_sampler_stays_inside(seed):
    poly = parse_assertion("x - y >= 0 and x + y <= 10 and y >= -2")
    pts = sample_points(poly, ["x", "y"], 20, random.Random(seed))
    assert pts and all(poly.holds(p) for p in pts)


@pytest.mark.parametrize("text", ["x >= 1 and c >= 1 and c <= 1", "x - y >= 0 and y >= 0 and x <= 3"])
def test_samplers_reach_requested_count(text):
    poly = parse_assertion(text)
    pts = sample_points(poly, ["x", "y", "c"], 2000, random.Random(0))
    assert len(pts) == 2000 and len({tuple(sorted(p.items())) for p in pts}) == 2000
    assert all(poly.holds(p) for p in pts)

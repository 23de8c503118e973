import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowopt.model import process_from_doc
from flowopt.optimizer import DegenerateX, find_bottlenecks, recommend, regress_improvement
from flowopt.quality import EmptyLogError
from flowopt.sim import Event, EventLog, ScenarioConfig, compare_runs, mean_report, run_simulation

from conftest import serial_doc

LOADED = ScenarioConfig(horizon=400.0, arrival_rate=0.18, seed=0)


@pytest.fixture(scope="module")
def a_to_b():
    doc = serial_doc([1.0, 5.0], [2, 1], rate_kind="Exponential")
    return process_from_doc(doc)


def test_loaded_second_stage_ranks_first(a_to_b):
    log, _ = run_simulation(a_to_b, LOADED)
    report = find_bottlenecks(log, a_to_b, LOADED.horizon)
    assert report.ranking[0] == "t1"
    assert report.mean_wait["t1"] > report.mean_wait["t0"]
    assert sum(report.share.values()) == pytest.approx(1.0)


def test_contention_free_ties_by_id():
    defn = process_from_doc(serial_doc([1.0, 1.0, 1.0], [1, 1, 1]))
    sc = ScenarioConfig(horizon=100.0, arrivals=(0.0, 10.0, 20.0))
    log, _ = run_simulation(defn, sc)
    report = find_bottlenecks(log, defn, 100.0)
    assert set(report.mean_wait.values()) == {0.0}
    assert report.ranking == ["t0", "t1", "t2"]


def test_single_activity_wait_and_share(minimal_doc):
    defn = process_from_doc(minimal_doc)
    log = EventLog([Event(0, "work", "clerk#0", 0.0, 0.0, 5.0), Event(1, "work", "clerk#0", 1.0, 5.0, 10.0)])
    report = find_bottlenecks(log, defn, 10.0)
    assert report.mean_wait == {"work": 2.0} and report.share == {"work": 1.0}


def test_empty_log(minimal_doc):
    with pytest.raises(EmptyLogError):
        find_bottlenecks(EventLog([]), process_from_doc(minimal_doc), 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([0.5, 2.0, 3.7, 1e3]))
def test_ranking_invariant_under_time_rescaling(seed, c):
    defn = process_from_doc(serial_doc([1.0, 2.0, 1.5], [1, 2, 1], rate_kind="Exponential"))
    log, _ = run_simulation(defn, ScenarioConfig(horizon=80.0, arrival_rate=0.5, seed=seed))
    scaled = EventLog([Event(e.case_id, e.activity, e.resource, e.enqueue_time * c, e.start_time * c,
                              e.complete_time * c) for e in log.events])
    assert find_bottlenecks(scaled, defn, 80.0 * c).ranking == find_bottlenecks(log, defn, 80.0).ranking


# -- recommendations ----------------------------------------------------------------------------

def test_budget_zero_with_unit_pools_is_empty():
    defn = process_from_doc(serial_doc([1.0, 5.0], [1, 1], rate_kind="Exponential"))
    log, _ = run_simulation(defn, LOADED)
    assert recommend(defn, LOADED, find_bottlenecks(log, defn, LOADED.horizon), budget=0) == []


def test_add_unit_to_bottleneck(a_to_b):
    log, _ = run_simulation(a_to_b, LOADED)
    recs = recommend(a_to_b, LOADED, find_bottlenecks(log, a_to_b, LOADED.horizon), budget=1)
    add = [r for r in recs if r.kind == "AddUnit" and r.to_role == "r1"]
    assert add and add[0].predicted.cycle_time > 0
    assert recs == sorted(recs, key=lambda r: -r.predicted.cycle_time)


def test_move_unit_from_idle_pool(a_to_b):
    log, _ = run_simulation(a_to_b, LOADED)
    recs = recommend(a_to_b, LOADED, find_bottlenecks(log, a_to_b, LOADED.horizon), budget=0)
    assert [(r.kind, r.from_role, r.to_role) for r in recs] == [("MoveUnit", "r0", "r1")]
    assert recs[0].apply(a_to_b).pool("r1").capacity == 2
    assert recs[0].apply(a_to_b).pool("r0").capacity == 1


def test_contention_free_has_no_recommendation():
    defn = process_from_doc(serial_doc([1.0, 1.0], [2, 1]))
    sc = ScenarioConfig(horizon=100.0, arrivals=(0.0, 10.0, 20.0))
    log, _ = run_simulation(defn, sc)
    assert recommend(defn, sc, find_bottlenecks(log, defn, 100.0), budget=2) == []


def test_predictions_reproduce(a_to_b):
    log, _ = run_simulation(a_to_b, LOADED)
    report = find_bottlenecks(log, a_to_b, LOADED.horizon)
    for rec in recommend(a_to_b, LOADED, report, budget=1, seeds=(3, 4)):
        assert rec.seeds == [3, 4]
        base = [run_simulation(a_to_b, LOADED.with_seed(s))[1] for s in rec.seeds]
        edit = [run_simulation(rec.apply(a_to_b), LOADED.with_seed(s))[1] for s in rec.seeds]
        again = compare_runs(mean_report(base), mean_report(edit))
        assert again == rec.predicted


def test_negative_budget(a_to_b):
    log, _ = run_simulation(a_to_b, LOADED)
    with pytest.raises(ValueError):
        recommend(a_to_b, LOADED, find_bottlenecks(log, a_to_b, LOADED.horizon), budget=-1)


# -- regression ------------------------------------------------------------------------------------

def test_collinear_points():
    r = regress_improvement([(1, 1), (2, 2), (3, 3)])
    assert (r.slope, r.intercept, r.r_squared) == (1.0, 0.0, 1.0)


def test_scenario_points():
    r = regress_improvement([(1000, 35), (3000, 42), (6000, 48)])
    assert r.slope > 0
    # closed form on these three points
    assert r.slope == pytest.approx(0.0025526315789, rel=1e-9)
    assert r.intercept == pytest.approx(33.157894736842, rel=1e-9)
    assert r.r_squared == pytest.approx(0.974824, abs=5e-7)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_two_points_fit_exactly(x1, y1, x2, y2):
    if abs(x1 - x2) < 1e-3:
        return
    assert regress_improvement([(x1, y1), (x2, y2)]).r_squared == pytest.approx(1.0)


def test_degenerate_x():
    with pytest.raises(DegenerateX):
        regress_improvement([(2, 1), (2, 5)])
    with pytest.raises(ValueError):
        regress_improvement([(1, 1)])


def grid_search(points, width, rounds=80):
    """Coarse-to-fine search of the squared-error surface over (slope, fitted value at mean x).

    That parametrization keeps the two axes uncorrelated, so the shrinking grid cannot
    stall in a diagonal valley.
    """
    dx, ys = _centered(points)
    b, c = 0.0, 0.0
    wb, wc = width
    for _ in range(rounds):
        bs = np.linspace(b - wb, b + wb, 21)
        cs = np.linspace(c - wc, c + wc, 21)
        sse = ((ys[None, None, :] - cs[None, :, None] - bs[:, None, None] * dx[None, None, :]) ** 2).sum(axis=2)
        i, j = np.unravel_index(np.argmin(sse), sse.shape)
        b, c = bs[i], cs[j]
        wb, wc = wb * 0.6, wc * 0.6
    return b, c


def _centered(points):
    xs = np.array([p[0] for p in points], dtype=float)
    return xs - xs.mean(), np.array([p[1] for p in points], dtype=float)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=3,
                unique_by=lambda p: p[0]))
def test_matches_grid_search(points):
    r = regress_improvement(points)
    b, c = grid_search(points, (200.0, 200.0))
    dx, ys = _centered(points)
    # a minimum located by comparing SSE values is only resolved to about sqrt(eps * SSE / curvature)
    sse = float(((ys - c - b * dx) ** 2).sum())
    slack = 10 * math.sqrt(np.finfo(float).eps * max(sse, 1.0))
    xbar = float(np.mean([p[0] for p in points]))
    assert r.slope == pytest.approx(b, abs=slack / math.sqrt((dx ** 2).sum()))
    assert r.intercept + r.slope * xbar == pytest.approx(c, abs=slack / math.sqrt(len(points)))


def test_r_squared_matches_numpy():
    for pts in itertools.combinations([(1, 3), (2, 1), (4, 7), (8, 2), (9, 9)], 3):
        xs, ys = zip(*pts)
        r = regress_improvement(pts)
        assert r.r_squared == pytest.approx(np.corrcoef(xs, ys)[0, 1] ** 2, abs=1e-12)

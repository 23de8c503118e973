import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowopt.quality import (EmptyLogError, FieldRules, QualityTargets, assess_quality, exact_count,
                             inject_defects, judge)
from flowopt.sim import Event, EventLog


def clean_log(n, seed=0):
    rng = random.Random(seed)
    events = []
    t = 0.0
    for i in range(n):
        t += rng.random()
        start = t + rng.random()
        events.append(Event(i // 3, f"act{i % 4}", "r#0", t, start, start + 0.5 + rng.random()))
    return EventLog(events)


def test_clean_log_passes_everything():
    rep = assess_quality(clean_log(50))
    assert (rep.missing_rate, rep.anomaly_rate, rep.mean_latency, rep.max_latency) == (0.0, 0.0, 0.0, 0.0)
    assert rep.passed == {"missing": True, "anomaly": True, "latency": True}


def test_two_missing_in_a_thousand_fails():
    log = clean_log(1000)
    events = list(log.events)
    events[3] = replace(events[3], activity=None)
    events[700] = replace(events[700], activity=None)
    rep = assess_quality(EventLog(events), FieldRules(required_fields=("activity",), range_rules={}))
    assert rep.missing_rate == 0.002
    assert rep.passed["missing"] is False


def test_one_missing_in_a_thousand_is_on_the_target_and_fails():
    events = list(clean_log(1000).events)
    events[0] = replace(events[0], activity=None)
    rep = assess_quality(EventLog(events), FieldRules(required_fields=("activity",), range_rules={}))
    # strictly below is required
    assert rep.missing_rate == 0.001 and rep.passed["missing"] is False


def test_judge_is_strict():
    t = QualityTargets()
    assert judge(0.0009, 0.0049, 59.9, t) == {"missing": True, "anomaly": True, "latency": True}
    assert judge(0.001, 0.005, 60.0, t) == {"missing": False, "anomaly": False, "latency": False}
    assert judge(None, None, None, t) == {"missing": False, "anomaly": False, "latency": False}


def test_empty_log_is_an_error():
    with pytest.raises(EmptyLogError):
        assess_quality(EventLog([]))


def test_reference_clock_latency():
    log = clean_log(4)
    clock = [e.complete_time + d for e, d in zip(log.events, (0.0, 10.0, 30.0, 80.0))]
    rep = assess_quality(log, reference_clock=clock)
    assert rep.mean_latency == pytest.approx(30.0) and rep.max_latency == pytest.approx(80.0)
    assert rep.passed["latency"] is False
    with pytest.raises(ValueError):
        assess_quality(log, reference_clock=clock[:2])


def test_enumerated_rule():
    rules = FieldRules(range_rules={"activity": frozenset({"act0", "act1"})})
    rep = assess_quality(clean_log(8), rules)
    assert rep.anomaly_count == 4 and rep.anomaly_rate == 0.5


def test_zero_rates_leave_log_unchanged():
    log = clean_log(200)
    out = inject_defects(log, 0.0, 0.0, 0.0, seed=4)
    assert out.events == log.events


def test_missing_count_is_floor():
    log = clean_log(1000)
    out = inject_defects(log, missing_rate=0.01, rules=FieldRules(required_fields=("activity",), range_rules={}))
    assert sum(e.activity is None for e in out.events) == 10


def test_exact_count_handles_binary_rounding():
    assert exact_count(0.29, 100) == 29
    assert exact_count(0.001, 10_000) == 10
    assert exact_count(0.0, 5) == 0


def test_injection_is_deterministic_per_seed():
    log = clean_log(300)
    a = inject_defects(log, 0.05, 0.05, 1.0, seed=7)
    assert a.events == inject_defects(log, 0.05, 0.05, 1.0, seed=7).events
    assert a.events != inject_defects(log, 0.05, 0.05, 1.0, seed=8).events


def test_latency_shift_applies_to_all():
    rep = assess_quality(inject_defects(clean_log(20), latency_shift=90.0))
    assert rep.mean_latency == pytest.approx(90.0) and rep.passed["latency"] is False


@pytest.mark.parametrize("rate", [0.001, 0.01, 0.05])
def test_closed_loop_on_ten_thousand_events(rate):
    log = clean_log(10_000)
    rep = assess_quality(inject_defects(log, rate, rate, seed=1))
    assert rep.missing_rate == exact_count(rate, 10_000 * 5) / (10_000 * 5)
    assert rep.anomaly_rate == exact_count(rate, 10_000) / 10_000


def test_bad_rates_rejected():
    with pytest.raises(ValueError):
        inject_defects(clean_log(5), missing_rate=1.0)
    with pytest.raises(ValueError):
        QualityTargets(max_missing_rate=0.0)
    with pytest.raises(ValueError):
        FieldRules(required_fields=())


def test_rules_doc_roundtrip():
    rules = FieldRules(range_rules={"duration": (0.0, 5.0), "activity": frozenset({"a", "b"})})
    assert FieldRules.from_doc(rules.to_doc()) == rules


@settings(max_examples=40, deadline=None)
@given(st.integers(20, 300), st.floats(0, 0.3), st.floats(0, 0.3), st.integers(0, 1000))
def test_closed_loop_property(n, m, a, seed):
    rules = FieldRules(range_rules={"duration": (0.0, 1e9), "wait": (0.0, 1e9)})
    log = clean_log(n, seed)
    rep = assess_quality(inject_defects(log, m, a, seed=seed, rules=rules), rules)
    assert rep.missing_count == exact_count(m, n * len(rules.required_fields))
    assert rep.anomaly_count == exact_count(a, n * 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 200), st.integers(0, 1000), st.data())
def test_one_more_defect_never_lowers_rates(n, seed, data):
    rules = FieldRules(required_fields=("activity",), range_rules={"duration": (0.0, 1e9)})
    log = clean_log(n, seed)
    k = data.draw(st.integers(0, n // 3))
    base = inject_defects(log, k / n, k / n, seed=seed, rules=rules)
    before = assess_quality(base, rules)
    events = list(base.events)
    i = next(j for j, e in enumerate(events) if e.activity is not None and e.duration is not None
             and e.duration >= 0)
    events[i] = replace(events[i], activity=None)
    after_missing = assess_quality(EventLog(events), rules)
    assert after_missing.missing_rate > before.missing_rate
    events = list(base.events)
    events[i] = replace(events[i], complete_time=events[i].start_time - 1.0)
    after_anomaly = assess_quality(EventLog(events), rules)
    assert after_anomaly.anomaly_rate > before.anomaly_rate

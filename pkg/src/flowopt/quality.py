"""Event-log quality indicators: field completeness, range validity, ingestion latency."""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .sim.eventlog import Event, EventLog

FIELDS = ("case_id", "activity", "resource", "enqueue_time", "start_time", "complete_time")
DERIVED = {"duration": ("start_time", "complete_time"), "wait": ("enqueue_time", "start_time")}
DEFAULT_REQUIRED = ("case_id", "activity", "enqueue_time", "start_time", "complete_time")


class EmptyLogError(ValueError):
    """No events: every indicator would be undefined."""


@dataclass(frozen=True)
class QualityTargets:
    max_missing_rate: float = 0.001
    max_anomaly_rate: float = 0.005
    max_latency: float = 60.0

    def __post_init__(self):
        for name in ("max_missing_rate", "max_anomaly_rate"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")
        if not self.max_latency > 0:
            raise ValueError("max_latency must be > 0")


@dataclass(frozen=True)
class FieldRules:
    """``range_rules`` maps a field (or ``duration``/``wait``) to a closed
    interval ``(lo, hi)`` or to a set of allowed values."""

    required_fields: tuple = DEFAULT_REQUIRED
    range_rules: dict = field(default_factory=lambda: {"duration": (0.0, 1e9)})

    def __post_init__(self):
        if not self.required_fields:
            raise ValueError("required_fields must not be empty")
        for name in self.required_fields:
            if name not in FIELDS:
                raise ValueError(f"unknown field {name!r}")
        for name, rule in self.range_rules.items():
            if name not in FIELDS and name not in DERIVED:
                raise ValueError(f"no rule target {name!r}")
            if isinstance(rule, tuple) and (len(rule) != 2 or rule[0] > rule[1]):
                raise ValueError(f"bad interval for {name!r}")

    def to_doc(self) -> dict:
        rules = {k: (list(v) if isinstance(v, tuple) else {"allowed": sorted(v, key=str)})
                 for k, v in self.range_rules.items()}
        return {"required_fields": list(self.required_fields), "range_rules": rules}

    @classmethod
    def from_doc(cls, doc: dict) -> "FieldRules":
        rules = {}
        for k, v in doc.get("range_rules", {}).items():
            rules[k] = frozenset(v["allowed"]) if isinstance(v, dict) else (float(v[0]), float(v[1]))
        return cls(tuple(doc.get("required_fields", DEFAULT_REQUIRED)), rules)


def _value(ev: Event, name: str):
    # Event exposes duration and wait as properties
    return getattr(ev, name)


def _violates(value, rule) -> bool:
    if value is None:
        return False  # absent values count toward completeness, not validity
    if isinstance(rule, tuple):
        return not (rule[0] <= value <= rule[1])
    return value not in rule


@dataclass
class QualityReport:
    n_events: int
    missing_count: int
    missing_rate: float
    anomaly_count: int
    anomaly_rate: Optional[float]
    mean_latency: Optional[float]
    max_latency: Optional[float]
    passed: dict
    targets: QualityTargets

    def to_flat(self) -> dict:
        out = {k: getattr(self, k) for k in ("n_events", "missing_count", "missing_rate", "anomaly_count",
                                            "anomaly_rate", "mean_latency", "max_latency")}
        out.update({f"pass.{k}": v for k, v in self.passed.items()})
        out.update({f"target.{k}": v for k, v in vars(self.targets).items()})
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n"


def judge(missing_rate, anomaly_rate, max_latency, targets: QualityTargets) -> dict:
    """Pass flags: each measured value must be strictly below its target."""
    def below(v, t):
        return v is not None and v < t
    return {"missing": below(missing_rate, targets.max_missing_rate),
            "anomaly": below(anomaly_rate, targets.max_anomaly_rate),
            "latency": below(max_latency, targets.max_latency)}


def assess_quality(log: EventLog, rules: FieldRules = None, targets: QualityTargets = None,
                   reference_clock: Optional[Sequence[float]] = None) -> QualityReport:
    """Per-field-slot rates plus latency = ingestion - completion.

    The ingestion clock comes from ``reference_clock`` (one value per event),
    else each event's ``ingest_time``, else completion itself (latency 0).
    """
    rules = rules or FieldRules()
    targets = targets or QualityTargets()
    events = log.events
    n = len(events)
    if n == 0:
        raise EmptyLogError("log has no events")
    if reference_clock is not None and len(reference_clock) != n:
        raise ValueError("reference_clock needs one timestamp per event")
    missing = sum(1 for ev in events for f in rules.required_fields if getattr(ev, f) is None)
    anomalies = sum(1 for ev in events for f, rule in rules.range_rules.items()
                    if _violates(_value(ev, f), rule))
    latencies = []
    for i, ev in enumerate(events):
        ingest = reference_clock[i] if reference_clock is not None else ev.ingest_time
        if ev.complete_time is None:
            continue
        latencies.append(0.0 if ingest is None else ingest - ev.complete_time)
    missing_rate = missing / (n * len(rules.required_fields))
    checked = n * len(rules.range_rules)
    anomaly_rate = anomalies / checked if checked else 0.0
    mean_lat = math.fsum(latencies) / len(latencies) if latencies else None
    max_lat = max(latencies) if latencies else None
    return QualityReport(n, missing, missing_rate, anomalies, anomaly_rate, mean_lat, max_lat,
                         judge(missing_rate, anomaly_rate, max_lat, targets), targets)


def exact_count(rate: float, slots: int) -> int:
    """floor(rate * slots), immune to binary rounding such as 0.29 * 100."""
    return math.floor(rate * slots + 1e-9)


def _break(ev: Event, name: str, rule) -> Event:
    """Copy of ``ev`` whose ``name`` value violates ``rule``."""
    if isinstance(rule, tuple):
        lo, hi = rule
        bad = lo - 1.0 if math.isfinite(lo) else hi + 1.0
    else:
        bad = "<invalid>"
    if name == "duration":
        return replace(ev, complete_time=ev.start_time + bad)
    if name == "wait":
        return replace(ev, enqueue_time=ev.start_time - bad)
    return replace(ev, **{name: bad})


def inject_defects(log: EventLog, missing_rate: float = 0.0, anomaly_rate: float = 0.0,
                   latency_shift: float = 0.0, seed: int = 0, rules: FieldRules = None) -> EventLog:
    """Seeded defect injection with exact counts.

    floor(anomaly_rate * n * |rules|) currently-valid rule slots are broken,
    then floor(missing_rate * n * |required|) required slots are blanked,
    avoiding any field that feeds an injected anomaly so both counts stay
    exact. ``latency_shift`` delays every ingestion timestamp.
    """
    rules = rules or FieldRules()
    for r in (missing_rate, anomaly_rate):
        if not 0.0 <= r < 1.0:
            raise ValueError("rates must be in [0, 1)")
    rng = random.Random(f"{seed}:defects")
    events = [replace(ev, attributes=dict(ev.attributes)) for ev in log.events]
    n = len(events)

    rule_items = list(rules.range_rules.items())
    candidates = [(i, k) for i in range(n) for k, (name, rule) in enumerate(rule_items)
                  if _value(events[i], name) is not None and not _violates(_value(events[i], name), rule)]
    n_anom = exact_count(anomaly_rate, n * len(rule_items))
    if n_anom > len(candidates):
        raise ValueError("not enough valid values to reach the anomaly rate")
    protected = set()
    for i, k in sorted(rng.sample(candidates, n_anom)):
        name, rule = rule_items[k]
        events[i] = _break(events[i], name, rule)
        for f in DERIVED.get(name, (name,)):
            protected.add((i, f))

    slots = [(i, f) for i in range(n) for f in rules.required_fields
             if getattr(events[i], f) is not None and (i, f) not in protected]
    n_missing = exact_count(missing_rate, n * len(rules.required_fields))
    if n_missing > len(slots):
        raise ValueError("not enough filled slots to reach the missing rate")
    for i, f in rng.sample(slots, n_missing):
        events[i] = replace(events[i], **{f: None})

    if latency_shift:
        for i, ev in enumerate(events):
            base = ev.ingest_time if ev.ingest_time is not None else ev.complete_time
            if base is not None:
                events[i] = replace(ev, ingest_time=base + latency_shift)
    meta = dict(log.meta)
    meta["defects"] = {"missing": n_missing, "anomalies": n_anom, "latency_shift": latency_shift, "seed": seed}
    return EventLog(events, meta)

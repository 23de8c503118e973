"""KPI computation from event logs and baseline-vs-optimized comparison."""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import asdict, dataclass, field
from typing import Optional

from ..model.types import END, START, TASK, ProcessDefinition
from .eventlog import EventLog


class InconsistentLog(ValueError):
    pass


def nearest_rank(values, p: float):
    """Smallest sample whose rank is >= ceil(p * n)."""
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, math.ceil(p * len(ordered) - 1e-12))
    return ordered[rank - 1]


@dataclass
class KpiReport:
    case_count: int
    mean_cycle_time: Optional[float]
    median_cycle_time: Optional[float]
    p95_cycle_time: Optional[float]
    throughput: float
    utilization: dict
    mean_wait: dict
    total_cost: float
    horizon: float
    busy_time: dict = field(default_factory=dict)
    capacity: dict = field(default_factory=dict)

    @property
    def overall_utilization(self) -> float:
        """Capacity-weighted utilization across all pools."""
        weights = {r: self.capacity.get(r, 1) for r in self.utilization}
        total = sum(weights.values())
        if not total:
            return 0.0
        return math.fsum(u * weights[r] for r, u in self.utilization.items()) / total

    def to_flat(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                for kk, vv in sorted(v.items()):
                    out[f"{k}.{kk}"] = vv
            else:
                out[k] = v
        out["overall_utilization"] = self.overall_utilization
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_flat(cls, doc: dict) -> "KpiReport":
        nested = {"utilization": {}, "mean_wait": {}, "busy_time": {}, "capacity": {}}
        plain = {}
        for k, v in doc.items():
            head, dot, tail = k.partition(".")
            if dot and head in nested:
                nested[head][tail] = v
            elif k != "overall_utilization":
                plain[k] = v
        return cls(**plain, **nested)


def compute_kpis(log: EventLog, defn: ProcessDefinition, horizon: float) -> KpiReport:
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    starts, ends = {}, {}
    busy = {p.role: 0.0 for p in defn.pools}
    waits = {n.id: [] for n in defn.tasks}
    task_cost = 0.0
    for i, ev in enumerate(log.events):
        if ev.activity is None or not defn.has_node(ev.activity):
            raise InconsistentLog(f"event {i}: unknown activity {ev.activity!r}")
        if ev.case_id is None or None in (ev.enqueue_time, ev.start_time, ev.complete_time):
            raise InconsistentLog(f"event {i}: missing fields")
        if not ev.enqueue_time <= ev.start_time <= ev.complete_time:
            raise InconsistentLog(f"event {i}: timestamps out of order")
        node = defn.node(ev.activity)
        if node.kind == START:
            starts[ev.case_id] = ev.enqueue_time
        elif node.kind == END:
            ends[ev.case_id] = max(ends.get(ev.case_id, ev.complete_time), ev.complete_time)
        elif node.kind == TASK:
            role = ev.role
            if role is None or role not in busy:
                raise InconsistentLog(f"event {i}: task without a known resource")
            lo, hi = max(ev.start_time, 0.0), min(ev.complete_time, horizon)
            if hi > lo:
                busy[role] += hi - lo
            waits[ev.activity].append(ev.start_time - ev.enqueue_time)
            task_cost += (ev.complete_time - ev.start_time) * (node.cost_rate or 0.0)

    cycles = [ends[c] - starts[c] for c in ends if c in starts]
    util = {}
    for p in defn.pools:
        util[p.role] = min(1.0, busy[p.role] / (p.capacity * horizon))
    pool_cost = sum(p.capacity * horizon * p.cost_rate for p in defn.pools)
    return KpiReport(
        case_count=len(cycles),
        mean_cycle_time=math.fsum(cycles) / len(cycles) if cycles else None,
        median_cycle_time=statistics.median(cycles) if cycles else None,
        p95_cycle_time=nearest_rank(cycles, 0.95),
        throughput=len(cycles) / horizon,
        utilization=util,
        mean_wait={a: (math.fsum(w) / len(w) if w else 0.0) for a, w in waits.items()},
        total_cost=task_cost + pool_cost,
        horizon=horizon,
        busy_time=busy,
        capacity={p.role: p.capacity for p in defn.pools},
    )


def mean_report(reports: list) -> KpiReport:
    """Average a list of reports field by field (undefined cycle stats skipped)."""
    if not reports:
        raise ValueError("no reports")

    def avg(vals):
        vals = [v for v in vals if v is not None]
        return math.fsum(vals) / len(vals) if vals else None

    def avg_map(maps):
        keys = sorted(set().union(*maps))
        return {k: avg([m.get(k) for m in maps]) for k in keys}

    return KpiReport(
        case_count=round(avg([r.case_count for r in reports])),
        mean_cycle_time=avg([r.mean_cycle_time for r in reports]),
        median_cycle_time=avg([r.median_cycle_time for r in reports]),
        p95_cycle_time=avg([r.p95_cycle_time for r in reports]),
        throughput=avg([r.throughput for r in reports]),
        utilization=avg_map([r.utilization for r in reports]),
        mean_wait=avg_map([r.mean_wait for r in reports]),
        total_cost=avg([r.total_cost for r in reports]),
        horizon=reports[0].horizon,
        busy_time=avg_map([r.busy_time for r in reports]),
        capacity=dict(reports[0].capacity),
    )


@dataclass
class ImprovementReport:
    """Percentage deltas; positive means the optimized run is better.

    ``None`` marks an undefined delta (baseline indicator is zero or missing).
    """

    cycle_time: Optional[float]
    utilization: Optional[float]
    cost: Optional[float]

    def to_doc(self) -> dict:
        return asdict(self)


def _lower_better(base, opt):
    if base is None or opt is None or base == 0:
        return None
    return 100.0 * (base - opt) / base


def _higher_better(base, opt):
    if base is None or opt is None or base == 0:
        return None
    return 100.0 * (opt - base) / base


def compare_runs(baseline: KpiReport, optimized: KpiReport) -> ImprovementReport:
    return ImprovementReport(
        cycle_time=_lower_better(baseline.mean_cycle_time, optimized.mean_cycle_time),
        utilization=_higher_better(baseline.overall_utilization, optimized.overall_utilization),
        cost=_lower_better(baseline.total_cost, optimized.total_cost),
    )

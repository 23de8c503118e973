"""Bottleneck ranking, what-if capacity recommendations and improvement regression."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .model.types import ProcessDefinition
from .quality import EmptyLogError
from .sim.engine import ScenarioConfig, Simulator
from .sim.eventlog import EventLog
from .sim.kpis import ImprovementReport, compare_runs, compute_kpis, mean_report
from .sim.policies import make_policy

TOP_ROLES = 3


class DegenerateX(ValueError):
    """All x values are equal, so no line can be fitted."""


@dataclass
class BottleneckReport:
    mean_wait: dict
    share: dict
    utilization: dict
    ranking: list

    def to_doc(self) -> dict:
        return {"ranking": list(self.ranking), "mean_wait": dict(self.mean_wait),
                "share": dict(self.share), "utilization": dict(self.utilization)}


def find_bottlenecks(log: EventLog, defn: ProcessDefinition, horizon: float) -> BottleneckReport:
    """Rank task activities by mean queue wait (descending, ties by id)."""
    if not log.events:
        raise EmptyLogError("log has no events")
    kpis = compute_kpis(log, defn, horizon)
    totals = {t.id: 0.0 for t in defn.tasks}
    for ev in log.events:
        if ev.activity in totals:
            totals[ev.activity] += ev.start_time - ev.enqueue_time
    grand = math.fsum(totals.values())
    share = {a: (w / grand if grand > 0 else 0.0) for a, w in totals.items()}
    ranking = sorted(kpis.mean_wait, key=lambda a: (-kpis.mean_wait[a], a))
    return BottleneckReport(dict(kpis.mean_wait), share, dict(kpis.utilization), ranking)


@dataclass
class Recommendation:
    kind: str                      # "AddUnit" or "MoveUnit"
    to_role: str
    from_role: Optional[str]
    predicted: ImprovementReport
    cost_delta: float              # currency per time unit
    seeds: list = field(default_factory=list)

    def apply(self, defn: ProcessDefinition) -> ProcessDefinition:
        out = defn.with_capacity(self.to_role, defn.pool(self.to_role).capacity + 1)
        if self.from_role is not None:
            out = out.with_capacity(self.from_role, defn.pool(self.from_role).capacity - 1)
        return out

    def to_doc(self) -> dict:
        return {"kind": self.kind, "to_role": self.to_role, "from_role": self.from_role,
                "predicted": self.predicted.to_doc(), "cost_delta": self.cost_delta, "seeds": list(self.seeds)}


def _mean_kpis(defn, scenario: ScenarioConfig, seeds):
    reports = []
    for seed in seeds:
        run = scenario.with_seed(seed)
        policy = make_policy(run.policy, seed, run.policy_ref, defn)
        reports.append(compute_kpis(Simulator(defn, run, policy).run(), defn, run.horizon))
    return mean_report(reports)


def _top_roles(defn: ProcessDefinition, report: BottleneckReport) -> list:
    roles = []
    for act in report.ranking:
        role = defn.node(act).role
        if role not in roles:
            roles.append(role)
    return roles[:TOP_ROLES]


def recommend(defn: ProcessDefinition, scenario: ScenarioConfig, report: BottleneckReport,
              budget: int = 1, seeds=(0, 1, 2)) -> list:
    """Capacity edits that re-simulate to a strictly shorter mean cycle time."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    seeds = list(seeds)
    targets = _top_roles(defn, report)
    candidates = []
    if budget >= 1:
        candidates += [("AddUnit", role, None) for role in targets]
    donor = min(defn.pools, key=lambda p: (report.utilization.get(p.role, 0.0), p.role))
    if donor.capacity > 1:
        candidates += [("MoveUnit", role, donor.role) for role in targets if role != donor.role]
    if not candidates:
        return []
    base = _mean_kpis(defn, scenario, seeds)
    out = []
    for kind, to_role, from_role in candidates:
        cost = defn.pool(to_role).cost_rate - (defn.pool(from_role).cost_rate if from_role else 0.0)
        rec = Recommendation(kind, to_role, from_role, None, cost, seeds)
        rec.predicted = compare_runs(base, _mean_kpis(rec.apply(defn), scenario, seeds))
        if rec.predicted.cycle_time is not None and rec.predicted.cycle_time > 0:
            out.append(rec)
    out.sort(key=lambda r: (-r.predicted.cycle_time, r.kind, r.to_role, r.from_role or ""))
    return out


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    n: int

    def to_doc(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared, "n": self.n}


def regress_improvement(points) -> RegressionResult:
    """Ordinary least squares of improvement on scale, with R^2 = 1 - SS_res/SS_tot."""
    pts = [(float(x), float(y)) for x, y in points]
    n = len(pts)
    if n < 2:
        raise ValueError("need at least two points")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    if sxx == 0.0:
        raise DegenerateX("all scales are equal")
    sxy = math.fsum((x - mx) * (y - my) for x, y in pts)
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_tot = math.fsum((y - my) ** 2 for y in ys)
    ss_res = math.fsum((y - (intercept + slope * x)) ** 2 for x, y in pts)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RegressionResult(slope, intercept, min(1.0, max(0.0, r2)), n)

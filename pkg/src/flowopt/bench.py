"""Scenario matrix: paired baseline/optimized runs and improvement-vs-scale regression."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .anomaly.benchmark import bundled_model
from .model.io import load_process
from .optimizer import regress_improvement
from .scheduler.evaluate import evaluate_policy
from .scheduler.policy import SchedulerPolicy
from .scheduler.train import TrainConfig, train_scheduler
from .sim.engine import ConfigError, ScenarioConfig

# desk scale: one day is DAY time units, so a daily case count maps to count / DAY per unit
DAY = 24_000.0
IMPROVEMENT_FIELDS = ("scale", "improvement_pct", "label", "utilization_pct", "cost_pct", "status")


@dataclass
class BenchScenario:
    label: str
    arrival_rate: float
    horizon: float
    baseline: str = "FIFO"
    optimized: str = "SPT"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    scale: Optional[float] = None  # cases/day; defaults to arrival_rate * DAY
    model: Optional[str] = None    # overrides the matrix model

    @property
    def cases_per_day(self) -> float:
        return self.scale if self.scale is not None else self.arrival_rate * DAY


@dataclass
class BenchMatrix:
    model: str
    scenarios: list
    policy_ref: Optional[str] = None
    train: Optional[dict] = None   # TrainConfig overrides when a Learned policy must be trained

    def check(self) -> None:
        if not self.scenarios:
            raise ConfigError("bench matrix needs at least one scenario")
        for sc in self.scenarios:
            if not sc.seeds:
                raise ConfigError(f"scenario {sc.label!r} has no seeds")

    @classmethod
    def from_doc(cls, doc: dict, base_dir=".") -> "BenchMatrix":
        base = Path(base_dir)

        def resolve(ref):
            if ref is None:
                return None
            p = base / ref
            return str(p) if p.exists() else ref

        scenarios = [BenchScenario(**{**s, "model": resolve(s.get("model"))}) for s in doc["scenarios"]]
        m = cls(resolve(doc["model"]), scenarios, resolve(doc.get("policy_ref")), doc.get("train"))
        m.check()
        return m


def default_matrix(model: str = "congested", seeds=(0, 1, 2, 3, 4), horizon: float = 2000.0) -> BenchMatrix:
    """Small / medium / large daily volumes at desk scale."""
    return BenchMatrix(model, [
        BenchScenario("small", 1000 / DAY, horizon, seeds=list(seeds), scale=1000),
        BenchScenario("medium", 3000 / DAY, horizon, seeds=list(seeds), scale=3000),
        BenchScenario("large", 6000 / DAY, horizon, seeds=list(seeds), scale=6000),
    ])


def resolve_model(ref: str):
    """A bundled model name or a path to a JSON/BPMN file."""
    path = Path(ref)
    if path.exists():
        return load_process(path)
    try:
        return bundled_model(ref)
    except FileNotFoundError:
        raise ConfigError(f"unknown model {ref!r}") from None


def _policy(selector, defn, scenario, matrix, trained):
    if selector != "Learned":
        return selector
    if matrix.policy_ref:
        policy = SchedulerPolicy.load(matrix.policy_ref)
        policy.check_compatible(defn)
        return policy
    key = (defn.id, scenario.arrival_rate, scenario.horizon)
    if key not in trained:
        cfg = TrainConfig.from_doc(matrix.train or {})
        trained[key] = train_scheduler(defn, scenario, cfg)
    return trained[key]


def run_bench(matrix: BenchMatrix, out_dir=None, plots: bool = True) -> dict:
    """Run every scenario; a failing scenario is recorded and the rest continue."""
    matrix.check()
    rows, timings, trained = [], {}, {}
    for sc in matrix.scenarios:
        t0 = time.perf_counter()
        row = {"label": sc.label, "scale": sc.cases_per_day, "arrival_rate": sc.arrival_rate,
               "horizon": sc.horizon, "baseline": sc.baseline, "optimized": sc.optimized,
               "seeds": list(sc.seeds)}
        try:
            defn = resolve_model(sc.model or matrix.model)
            scenario = ScenarioConfig(horizon=sc.horizon, arrival_rate=sc.arrival_rate)
            scenario.check()
            base = _policy(sc.baseline, defn, scenario, matrix, trained)
            opt = _policy(sc.optimized, defn, scenario, matrix, trained)
            ev = evaluate_policy(defn, scenario, {"baseline": base, "optimized": opt}, sc.seeds,
                                 baseline="baseline")
            imp = ev.improvement["optimized"]
            row.update(status="Done", error=None,
                       baseline_kpis=ev.reports["baseline"].to_flat(),
                       optimized_kpis=ev.reports["optimized"].to_flat(),
                       baseline_cycle_time=ev.reports["baseline"].mean_cycle_time,
                       optimized_cycle_time=ev.reports["optimized"].mean_cycle_time,
                       improvement=imp.to_doc(), improvement_pct=imp.cycle_time,
                       utilization_pct=imp.utilization, cost_pct=imp.cost,
                       per_seed_improvement=[d.cycle_time for d in ev.deltas["optimized"]])
        except Exception as exc:  # isolate the failure to this row
            row.update(status="Failed", error=f"{type(exc).__name__}: {exc}", improvement_pct=None,
                       utilization_pct=None, cost_pct=None, baseline_cycle_time=None, optimized_cycle_time=None)
        timings[sc.label] = time.perf_counter() - t0
        rows.append(row)

    points = [(r["scale"], r["improvement_pct"]) for r in rows if r["improvement_pct"] is not None]
    regression = None
    if len(points) >= 2:
        try:
            regression = regress_improvement(points).to_doc()
        except ValueError as exc:
            regression = {"error": str(exc)}
    report = {"model": matrix.model, "scenarios": rows, "regression": regression,
              "failed": [r["label"] for r in rows if r["status"] == "Failed"], "seconds": timings}
    if out_dir is not None:
        write_bench(report, out_dir, plots)
    return report


def summary_text(report: dict) -> str:
    lines = [f"bench on model {report['model']}", ""]
    lines.append(f"{'scenario':<12}{'scale':>8}{'baseline':>11}{'optimized':>11}{'improve%':>10}  status")
    for r in report["scenarios"]:
        def fmt(v, spec):
            return format(v, spec) if v is not None else "-"
        lines.append(f"{r['label']:<12}{fmt(r['scale'], '8.0f')}{fmt(r['baseline_cycle_time'], '11.3f')}"
                     f"{fmt(r['optimized_cycle_time'], '11.3f')}{fmt(r['improvement_pct'], '10.2f')}  {r['status']}"
                     + (f" ({r['error']})" if r["status"] == "Failed" else ""))
    reg = report["regression"]
    if reg and "slope" in reg:
        lines += ["", f"improvement ~ scale: slope {reg['slope']:.6g}, intercept {reg['intercept']:.6g}, "
                      f"R^2 {reg['r_squared']:.4f} (n={reg['n']})"]
    return "\n".join(lines) + "\n"


def write_bench(report: dict, out_dir, plots: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out / "improvements.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMPROVEMENT_FIELDS)
        for r in report["scenarios"]:
            w.writerow(["" if r.get(k) is None else r[k] for k in IMPROVEMENT_FIELDS])
    (out / "regression.json").write_text(json.dumps(report["regression"], indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(summary_text(report))
    if plots:
        from . import plotting
        plotting.bench_improvement(report["scenarios"], report["regression"] if report["regression"]
                                   and "slope" in report["regression"] else None, out / "improvement_vs_scale.png")
        plotting.bench_cycle_times(report["scenarios"], out / "cycle_times.png")

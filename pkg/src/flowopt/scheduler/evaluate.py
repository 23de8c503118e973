"""Paired-seed policy comparison and single-machine test instances."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from ..model.types import (AND_SPLIT, END, START, TASK, DurationDistribution, Node, ProcessDefinition,
                           ResourcePool, SequenceFlow)
from ..sim.engine import Policy, ScenarioConfig, Simulator
from ..sim.kpis import compare_runs, compute_kpis, mean_report
from ..sim.policies import make_policy

BASELINE = "FIFO"


@dataclass
class Evaluation:
    reports: dict                      # policy -> mean KpiReport
    per_seed: dict                     # policy -> [KpiReport] in run order
    improvement: dict                  # policy -> ImprovementReport of the means vs baseline
    deltas: dict = field(default_factory=dict)  # policy -> [ImprovementReport] per run

    def to_doc(self) -> dict:
        return {
            "reports": {k: r.to_flat() for k, r in self.reports.items()},
            "improvement": {k: v.to_doc() for k, v in self.improvement.items()},
            "deltas": {k: [d.to_doc() for d in v] for k, v in self.deltas.items()},
        }


def _policy_for(spec, seed: int, defn) -> Policy:
    if isinstance(spec, Policy):
        return spec
    if callable(spec):
        return spec(seed)
    return make_policy(spec, seed, None, defn)


def evaluate_policy(defn: ProcessDefinition, scenarios, policies: dict, seeds,
                    baseline: str = BASELINE) -> Evaluation:
    """Run every policy on every (scenario, seed) pair and compare with ``baseline``.

    ``policies`` maps a name to a selector string, a Policy instance or a
    ``seed -> Policy`` factory. A missing baseline entry is added as FIFO.
    """
    if isinstance(scenarios, ScenarioConfig):
        scenarios = [scenarios]
    policies = dict(policies)
    policies.setdefault(baseline, BASELINE)
    per_seed = {name: [] for name in policies}
    for sc in scenarios:
        for seed in seeds:
            for name, spec in policies.items():
                run = sc.with_seed(seed)
                log = Simulator(defn, run, _policy_for(spec, seed, defn)).run()
                per_seed[name].append(compute_kpis(log, defn, run.horizon))
    reports = {name: mean_report(rs) for name, rs in per_seed.items()}
    base = reports[baseline]
    improvement = {name: compare_runs(base, r) for name, r in reports.items()}
    deltas = {name: [compare_runs(b, r) for b, r in zip(per_seed[baseline], rs)]
              for name, rs in per_seed.items()}
    return Evaluation(reports, per_seed, improvement, deltas)


def single_machine_process(durations, role: str = "machine") -> ProcessDefinition:
    """n jobs with deterministic durations, all released together, one unit."""
    nodes = [Node("start", START), Node("fork", AND_SPLIT)]
    flows = [SequenceFlow("f_start", "start", "fork")]
    for i, d in enumerate(durations):
        nodes += [Node(f"job_{i}", TASK, DurationDistribution.deterministic(float(d)), role),
                  Node(f"end_{i}", END)]
        flows += [SequenceFlow(f"f_fork_{i}", "fork", f"job_{i}"),
                  SequenceFlow(f"f_job_{i}", f"job_{i}", f"end_{i}")]
    return ProcessDefinition("single_machine", "single machine", tuple(nodes), tuple(flows),
                             (ResourcePool(role, 1),))


def release_at_zero(horizon: float) -> ScenarioConfig:
    return ScenarioConfig(horizon=horizon, arrivals=(0.0,))


def total_flow_time(log, defn: ProcessDefinition) -> float:
    """Sum over task events of completion minus enqueue."""
    tasks = {t.id for t in defn.tasks}
    return sum(e.complete_time - e.enqueue_time for e in log.events if e.activity in tasks)


def optimal_flow_time(durations) -> float:
    """Minimum total flow time over every processing order (brute force)."""
    best = float("inf")
    for order in itertools.permutations(durations):
        t = total = 0.0
        for d in order:
            t += d
            total += t
        best = min(best, total)
    return best

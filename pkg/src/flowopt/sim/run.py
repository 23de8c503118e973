"""One-call entry point: simulate a scenario and compute its KPIs."""
from __future__ import annotations

from typing import Optional

from ..model.types import ProcessDefinition
from .engine import Policy, ScenarioConfig, Simulator
from .eventlog import EventLog
from .kpis import KpiReport, compute_kpis
from .policies import make_policy


def run_simulation(defn: ProcessDefinition, scenario: ScenarioConfig,
                   policy: Optional[Policy] = None) -> tuple[EventLog, KpiReport]:
    """Run ``scenario`` on ``defn``; same inputs give a byte-identical log.

    ``policy`` overrides the scenario's policy selector (used to pass an
    in-memory learned policy).
    """
    scenario.check()
    if policy is None:
        policy = make_policy(scenario.policy, scenario.seed, scenario.policy_ref, defn)
    log = Simulator(defn, scenario, policy).run()
    return log, compute_kpis(log, defn, scenario.horizon)

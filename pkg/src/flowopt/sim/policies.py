"""Baseline dispatching rules."""
from __future__ import annotations

import random

from .engine import ConfigError, Policy


class FifoPolicy(Policy):
    """Oldest pending task first, lowest free unit first."""

    name = "FIFO"

    def dispatch(self, sim):
        out = []
        for role, queue in sim.pending.items():
            out.extend(zip(queue, sim.free[role]))
        return out


class SptPolicy(Policy):
    """Shortest (sampled) processing time first; ties go to the older task."""

    name = "SPT"

    def dispatch(self, sim):
        out = []
        for role, queue in sim.pending.items():
            free = sim.free[role]
            if free and queue:
                ranked = sorted(queue, key=lambda p: (p.duration, p))
                out.extend(zip(ranked, free))
        return out


class RandomPolicy(Policy):
    """Uniformly random pending task per free unit, from a private stream."""

    name = "Random"

    def __init__(self, seed: int = 0):
        self.rng = random.Random(f"{seed}:random-policy")

    def dispatch(self, sim):
        out = []
        for role, queue in sim.pending.items():
            free = sim.free[role]
            if free and queue:
                k = min(len(free), len(queue))
                out.extend(zip(self.rng.sample(queue, k), free))
        return out


def make_policy(selector: str, seed: int = 0, policy_ref=None, defn=None) -> Policy:
    if selector == "FIFO":
        return FifoPolicy()
    if selector == "SPT":
        return SptPolicy()
    if selector == "Random":
        return RandomPolicy(seed)
    if selector == "Learned":
        from ..scheduler.policy import SchedulerPolicy
        if policy_ref is None:
            raise ConfigError("Learned policy needs a checkpoint")
        policy = policy_ref if isinstance(policy_ref, SchedulerPolicy) else SchedulerPolicy.load(policy_ref)
        if defn is not None:
            policy.check_compatible(defn)
        return policy
    raise ConfigError(f"unknown policy {selector!r}")

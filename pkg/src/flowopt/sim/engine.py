"""Discrete-event token-game simulator over resource pools.

Each case draws its durations and branch choices from its own stream keyed by
(seed, case_id), so a policy change never perturbs the random inputs of a
case. Arrivals come from a separate stream. Both are ``random.Random``
instances seeded with strings, which is stable across Python versions.
"""
from __future__ import annotations

import bisect
import heapq
import math
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from ..model.types import AND_JOIN, AND_SPLIT, END, START, TASK, XOR, ProcessDefinition
from ..model.validate import raise_for_violations, validate
from .eventlog import Event, EventLog, resource_name, sort_key

DEFAULT_MAX_IN_FLIGHT = 500
MAX_INSTANT_STEPS = 100_000


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


class StopSimulation(Exception):
    """Raised by a policy to end a run early (used by training loops)."""


@dataclass(frozen=True)
class ScenarioConfig:
    horizon: float
    arrival_rate: Optional[float] = None
    arrivals: Optional[tuple] = None
    seed: int = 0
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    policy: str = "FIFO"
    policy_ref: Optional[str] = None

    def check(self) -> None:
        if not (isinstance(self.horizon, (int, float)) and math.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigError("horizon must be > 0")
        if (self.arrival_rate is None) == (self.arrivals is None):
            raise ConfigError("give exactly one of arrival_rate and arrivals")
        if self.arrival_rate is not None and not (math.isfinite(self.arrival_rate) and self.arrival_rate > 0):
            raise ConfigError("arrival_rate must be > 0")
        if self.arrivals is not None and any(not math.isfinite(t) or t < 0 for t in self.arrivals):
            raise ConfigError("arrival times must be finite and >= 0")
        if not isinstance(self.max_in_flight, int) or self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be an integer >= 1")
        if self.policy not in ("FIFO", "Random", "SPT", "Learned"):
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.policy == "Learned" and not self.policy_ref:
            raise ConfigError("Learned policy needs policy_ref")

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)

    def to_doc(self) -> dict:
        doc = {"horizon": self.horizon, "seed": self.seed, "max_in_flight": self.max_in_flight,
               "policy": self.policy}
        if self.arrival_rate is not None:
            doc["arrival_rate"] = self.arrival_rate
        if self.arrivals is not None:
            doc["arrivals"] = list(self.arrivals)
        if self.policy_ref is not None:
            doc["policy_ref"] = self.policy_ref
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "ScenarioConfig":
        known = {"horizon", "arrival_rate", "arrivals", "seed", "max_in_flight", "policy", "policy_ref"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        if "horizon" not in doc:
            raise ConfigError("scenario needs a horizon")
        arrivals = doc.get("arrivals")
        try:
            cfg = cls(horizon=float(doc["horizon"]),
                      arrival_rate=float(doc["arrival_rate"]) if doc.get("arrival_rate") is not None else None,
                      arrivals=tuple(float(t) for t in arrivals) if arrivals is not None else None,
                      seed=int(doc.get("seed", 0)),
                      max_in_flight=int(doc.get("max_in_flight", DEFAULT_MAX_IN_FLIGHT)),
                      policy=doc.get("policy", "FIFO"),
                      policy_ref=doc.get("policy_ref"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.check()
        return cfg


@dataclass(order=True, frozen=True)
class PendingTask:
    """A task token waiting for a unit; ordering is oldest-first."""

    enqueue_time: float
    case_id: int
    activity: str
    seq: int
    role: str = field(compare=False)
    duration: float = field(compare=False)


@dataclass
class _Case:
    case_id: int
    rng: random.Random
    tokens: int = 0
    joins: dict = field(default_factory=dict)


# calendar entry kinds
_ARRIVAL, _COMPLETE = 0, 1


@dataclass(frozen=True)
class Snapshot:
    """Plain-data view of the system at a decision instant."""

    now: float
    horizon: float
    pending: dict
    free: dict
    capacity: dict
    in_flight: int
    max_in_flight: int
    has_future_events: bool
    wait_integral: float
    in_service: dict = field(default_factory=dict)  # activity -> tasks currently being processed

    def to_doc(self) -> dict:
        return {
            "now": self.now, "horizon": self.horizon,
            "pending": {r: [[p.enqueue_time, p.case_id, p.activity, p.seq, p.role, p.duration]
                            for p in ps] for r, ps in self.pending.items()},
            "free": {r: list(u) for r, u in self.free.items()},
            "capacity": dict(self.capacity), "in_flight": self.in_flight,
            "max_in_flight": self.max_in_flight, "has_future_events": self.has_future_events,
            "wait_integral": self.wait_integral, "in_service": dict(self.in_service),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Snapshot":
        pending = {r: tuple(PendingTask(e, c, a, s, role=ro, duration=d) for e, c, a, s, ro, d in ps)
                   for r, ps in doc["pending"].items()}
        return cls(doc["now"], doc["horizon"], pending,
                   {r: tuple(u) for r, u in doc["free"].items()}, dict(doc["capacity"]),
                   doc["in_flight"], doc["max_in_flight"], doc["has_future_events"],
                   doc["wait_integral"], dict(doc.get("in_service", {})))


class Policy:
    """Dispatching rule interface.

    ``dispatch`` is called at every instant where some role has a free unit
    and a pending task. It returns (PendingTask, unit) pairs to start now.
    """

    name = "policy"

    def begin(self, sim: "Simulator") -> None:
        pass

    def dispatch(self, sim: "Simulator") -> list:
        raise NotImplementedError

    def end(self, sim: "Simulator") -> None:
        pass


class Simulator:
    def __init__(self, defn: ProcessDefinition, scenario: ScenarioConfig, policy: Policy,
                 check: bool = True):
        if check:
            raise_for_violations(validate(defn))
        scenario.check()
        self.defn = defn
        self.scenario = scenario
        self.policy = policy
        self.horizon = float(scenario.horizon)
        self.now = 0.0
        self.capacity = {p.role: p.capacity for p in defn.pools}
        self.free = {p.role: list(range(p.capacity)) for p in defn.pools}
        self.pending = {p.role: [] for p in defn.pools}
        self.n_pending = 0
        self.in_service = {n.id: 0 for n in defn.tasks}
        self.wait_integral = 0.0
        self.in_flight = 0
        self.arrivals = 0
        self.rejected = 0
        self.completed = 0
        self.stopped = False
        self._calendar = []
        self._seq = 0
        self._cases = {}
        self._events = []
        self._arrival_rng = random.Random(f"{scenario.seed}:arrivals")

    # -- calendar ---------------------------------------------------------
    def _push(self, t, case_id, key, kind, payload=None):
        self._seq += 1
        heapq.heappush(self._calendar, (t, case_id, key, self._seq, kind, payload))

    def _next_seq(self):
        self._seq += 1
        return self._seq

    def has_future_events(self) -> bool:
        return bool(self._calendar) and self._calendar[0][0] <= self.horizon

    # -- token game -------------------------------------------------------
    def _log(self, case_id, node_id, t0, t1, t2, resource=None):
        self._events.append(Event(case_id, node_id, resource, t0, t1, t2))

    def _arrive(self, case_id):
        t = self.now
        self.arrivals += 1
        if self.in_flight >= self.scenario.max_in_flight:
            self.rejected += 1
            return
        case = _Case(case_id, random.Random(f"{self.scenario.seed}:case:{case_id}"), tokens=1)
        self._cases[case_id] = case
        self.in_flight += 1
        start = self.defn.start
        self._log(case_id, start.id, t, t, t)
        self._move_on(case, start.id, [])

    def _move_on(self, case, node_id, stack):
        flows = self.defn.outgoing(node_id)
        case.tokens += len(flows) - 1
        for f in reversed(flows):
            stack.append(f.target)
        self._run_tokens(case, stack)

    def _run_tokens(self, case, stack):
        t = self.now
        steps = 0
        while stack:
            steps += 1
            if steps > MAX_INSTANT_STEPS:
                raise SimulationError(f"case {case.case_id}: token loop without tasks")
            node = self.defn.node(stack.pop())
            kind = node.kind
            if kind == TASK:
                dur = node.duration.sample(case.rng)
                item = PendingTask(t, case.case_id, node.id, self._next_seq(), role=node.role, duration=dur)
                bisect.insort(self.pending[node.role], item)
                self.n_pending += 1
            elif kind == XOR:
                self._log(case.case_id, node.id, t, t, t)
                u = case.rng.random()
                flows = self.defn.outgoing(node.id)
                acc = 0.0
                chosen = flows[-1]
                for f in flows:
                    acc += f.probability
                    if u < acc:
                        chosen = f
                        break
                stack.append(chosen.target)
            elif kind == AND_JOIN:
                n_in = len(self.defn.incoming(node.id))
                first, count = case.joins.get(node.id, (t, 0))
                count += 1
                if count < n_in:
                    case.joins[node.id] = (first, count)
                    continue
                case.joins.pop(node.id, None)
                case.tokens -= n_in - 1
                self._log(case.case_id, node.id, first, t, t)
                flows = self.defn.outgoing(node.id)
                case.tokens += len(flows) - 1
                stack.extend(f.target for f in reversed(flows))
            elif kind == END:
                self._log(case.case_id, node.id, t, t, t)
                case.tokens -= 1
                if case.tokens == 0:
                    self.completed += 1
                    self.in_flight -= 1
                    del self._cases[case.case_id]
            else:  # AND split, or a start event reached again
                self._log(case.case_id, node.id, t, t, t)
                flows = self.defn.outgoing(node.id)
                case.tokens += len(flows) - 1
                stack.extend(f.target for f in reversed(flows))

    def _complete(self, payload):
        item, unit, started = payload
        t = self.now
        bisect.insort(self.free[item.role], unit)
        self.in_service[item.activity] -= 1
        self._log(item.case_id, item.activity, item.enqueue_time, started, t,
                  resource_name(item.role, unit))
        case = self._cases[item.case_id]
        self._move_on(case, item.activity, [])

    def start_task(self, item: PendingTask, unit: int) -> None:
        queue = self.pending[item.role]
        free = self.free[item.role]
        if unit not in free:
            raise SimulationError(f"unit {item.role}#{unit} is busy")
        queue.remove(item)
        free.remove(unit)
        self.n_pending -= 1
        self.in_service[item.activity] += 1
        self._push(self.now + item.duration, item.case_id, item.activity, _COMPLETE, (item, unit, self.now))

    def decision_needed(self) -> bool:
        return any(self.free[r] and self.pending[r] for r in self.free)

    def snapshot(self) -> Snapshot:
        return Snapshot(self.now, self.horizon,
                        {r: tuple(q) for r, q in self.pending.items()},
                        {r: tuple(u) for r, u in self.free.items()},
                        dict(self.capacity), self.in_flight, self.scenario.max_in_flight,
                        self.has_future_events(), self.wait_integral, dict(self.in_service))

    def _advance_clock(self, t):
        self.wait_integral += self.n_pending * (t - self.now)
        self.now = t

    # -- main loop --------------------------------------------------------
    def run(self) -> EventLog:
        sc = self.scenario
        if sc.arrivals is not None:
            for i, t in enumerate(sorted(sc.arrivals)):
                self._push(float(t), i, "", _ARRIVAL)
            next_case = None
        else:
            next_case = 0
            self._push(self._arrival_rng.expovariate(sc.arrival_rate), 0, "", _ARRIVAL)
        self.policy.begin(self)
        cal = self._calendar
        try:
            while cal and cal[0][0] <= self.horizon:
                t = cal[0][0]
                self._advance_clock(t)
                while cal and cal[0][0] == t:
                    _, case_id, _, _, kind, payload = heapq.heappop(cal)
                    if kind == _ARRIVAL:
                        self._arrive(case_id)
                        if next_case is not None:
                            next_case += 1
                            self._push(t + self._arrival_rng.expovariate(sc.arrival_rate),
                                       next_case, "", _ARRIVAL)
                    else:
                        self._complete(payload)
                if self.decision_needed():
                    for item, unit in self.policy.dispatch(self):
                        self.start_task(item, unit)
            self._advance_clock(self.horizon if cal else self.now)
        except StopSimulation:
            self.stopped = True
        self.policy.end(self)
        events = sorted(self._events, key=sort_key)
        meta = {
            "process_id": self.defn.id, "scenario": sc.to_doc(), "seed": sc.seed,
            "policy": getattr(self.policy, "name", type(self.policy).__name__),
            "arrivals": self.arrivals, "rejected": self.rejected, "completed": self.completed,
            "in_flight": self.in_flight, "end_time": self.now, "stopped": self.stopped,
        }
        return EventLog(events, meta)

"""Process-graph data types: nodes, flows, resource pools and duration laws."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional


START = "StartEvent"
END = "EndEvent"
TASK = "Task"
XOR = "XorGateway"
AND_SPLIT = "AndGatewaySplit"
AND_JOIN = "AndGatewayJoin"
NODE_KINDS = (START, END, TASK, XOR, AND_SPLIT, AND_JOIN)

DETERMINISTIC = "Deterministic"
EXPONENTIAL = "Exponential"
UNIFORM = "Uniform"
TRUNC_NORMAL = "TruncatedNormal"

# parameter names per distribution kind, in document order
DURATION_PARAMS = {
    DETERMINISTIC: ("value",),
    EXPONENTIAL: ("rate",),
    UNIFORM: ("low", "high"),
    TRUNC_NORMAL: ("mean", "stddev"),
}


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


@dataclass(frozen=True)
class DurationDistribution:
    kind: str
    params: tuple

    def param(self, name: str) -> float:
        return self.params[DURATION_PARAMS[self.kind].index(name)]

    def problems(self) -> list[str]:
        if self.kind not in DURATION_PARAMS:
            return [f"unknown duration kind {self.kind!r}"]
        names = DURATION_PARAMS[self.kind]
        if len(self.params) != len(names):
            return [f"{self.kind} needs parameters {names}"]
        out = []
        for name, v in zip(names, self.params):
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                out.append(f"{name} must be a finite number")
            elif v < 0 or (v == 0 and not (self.kind == UNIFORM and name == "low")):
                out.append(f"{name} must be positive")
        if not out and self.kind == UNIFORM and not self.params[0] < self.params[1]:
            out.append("Uniform requires low < high")
        return out

    def mean(self) -> float:
        k, p = self.kind, self.params
        if k == DETERMINISTIC:
            return float(p[0])
        if k == EXPONENTIAL:
            return 1.0 / p[0]
        if k == UNIFORM:
            return 0.5 * (p[0] + p[1])
        mu, sd = p
        alpha = -mu / sd
        phi = math.exp(-0.5 * alpha * alpha) / math.sqrt(2 * math.pi)
        return mu + sd * phi / (1.0 - _norm_cdf(alpha))

    def sample(self, rng: random.Random) -> float:
        k, p = self.kind, self.params
        if k == DETERMINISTIC:
            return float(p[0])
        if k == EXPONENTIAL:
            while True:
                x = rng.expovariate(p[0])
                if x > 0.0:
                    return x
        if k == UNIFORM:
            while True:
                x = rng.uniform(p[0], p[1])
                if x > 0.0:
                    return x
        # rejection keeps the law exactly truncated at zero
        while True:
            x = rng.gauss(p[0], p[1])
            if x > 0.0:
                return x

    def to_doc(self) -> dict:
        doc = {"kind": self.kind}
        doc.update(zip(DURATION_PARAMS[self.kind], self.params))
        return doc

    @classmethod
    def deterministic(cls, value: float) -> "DurationDistribution":
        return cls(DETERMINISTIC, (value,))

    @classmethod
    def exponential(cls, rate: float) -> "DurationDistribution":
        return cls(EXPONENTIAL, (rate,))


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    duration: Optional[DurationDistribution] = None
    role: Optional[str] = None
    cost_rate: Optional[float] = None

    @property
    def is_task(self) -> bool:
        return self.kind == TASK


@dataclass(frozen=True)
class SequenceFlow:
    id: str
    source: str
    target: str
    probability: Optional[float] = None


@dataclass(frozen=True)
class ResourcePool:
    role: str
    capacity: int
    cost_rate: float = 0.0


@dataclass(frozen=True)
class ProcessDefinition:
    """An executable process graph. Immutable; safe to share between threads."""

    id: str
    name: str
    nodes: tuple[Node, ...]
    flows: tuple[SequenceFlow, ...]
    pools: tuple[ResourcePool, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "pools", tuple(self.pools))
        outgoing: dict[str, list[SequenceFlow]] = {}
        incoming: dict[str, list[SequenceFlow]] = {}
        for f in self.flows:
            outgoing.setdefault(f.source, []).append(f)
            incoming.setdefault(f.target, []).append(f)
        object.__setattr__(self, "_index", {
            "nodes": {n.id: n for n in self.nodes},
            "pools": {p.role: p for p in self.pools},
            "out": {k: tuple(v) for k, v in outgoing.items()},
            "in": {k: tuple(v) for k, v in incoming.items()},
        })

    def node(self, node_id: str) -> Node:
        return self._index["nodes"][node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._index["nodes"]

    def pool(self, role: str) -> ResourcePool:
        return self._index["pools"][role]

    def has_pool(self, role: str) -> bool:
        return role in self._index["pools"]

    def outgoing(self, node_id: str) -> tuple[SequenceFlow, ...]:
        return self._index["out"].get(node_id, ())

    def incoming(self, node_id: str) -> tuple[SequenceFlow, ...]:
        return self._index["in"].get(node_id, ())

    @property
    def start(self) -> Node:
        return next(n for n in self.nodes if n.kind == START)

    @property
    def tasks(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == TASK]

    @property
    def roles(self) -> list[str]:
        return [p.role for p in self.pools]

    def with_capacity(self, role: str, capacity: int) -> "ProcessDefinition":
        pools = [ResourcePool(p.role, capacity, p.cost_rate) if p.role == role else p
                 for p in self.pools]
        return ProcessDefinition(self.id, self.name, self.nodes, self.flows, pools)

    def structure(self) -> tuple:
        """Order-insensitive structural content, for round-trip comparisons."""
        return (self.id, self.name, frozenset(self.nodes), frozenset(self.flows),
                frozenset(self.pools))

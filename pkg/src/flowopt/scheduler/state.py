"""Scheduling MDP: state vector layout, action space and validity masks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..model.types import ProcessDefinition

DEFAULT_SLOTS = 8
SLOT_FEATURES = 3  # occupied, mean duration, age


@dataclass(frozen=True)
class EncodingSpec:
    """Everything needed to turn a snapshot into a fixed-length vector."""

    activities: tuple
    roles: tuple
    mean_durations: tuple
    slots: int = DEFAULT_SLOTS
    count_cap: float = 20.0
    duration_scale: float = 1.0

    @classmethod
    def from_process(cls, defn: ProcessDefinition, slots: int = DEFAULT_SLOTS,
                     count_cap: float = 20.0) -> "EncodingSpec":
        tasks = defn.tasks
        means = tuple(t.duration.mean() for t in tasks)
        return cls(tuple(t.id for t in tasks), tuple(defn.roles), means, slots, count_cap,
                   max(means) if means else 1.0)

    @property
    def n_actions(self) -> int:
        return self.slots + 1

    @property
    def wait_action(self) -> int:
        return self.slots

    @property
    def size(self) -> int:
        n_a, n_r = len(self.activities), len(self.roles)
        return 2 * n_a + 3 * n_r + 2 + self.slots * SLOT_FEATURES

    def layout(self) -> dict:
        """Name -> slice of the state vector."""
        n_a, n_r = len(self.activities), len(self.roles)
        pos = 0
        out = {}
        for name, width in (("queue", n_a), ("in_service", n_a), ("free", n_r), ("busy", n_r),
                            ("clock", 1), ("in_flight", 1), ("acting_role", n_r),
                            ("slots", self.slots * SLOT_FEATURES)):
            out[name] = slice(pos, pos + width)
            pos += width
        return out

    def to_doc(self) -> dict:
        return asdict(self)

    @classmethod
    def from_doc(cls, doc: dict) -> "EncodingSpec":
        return cls(tuple(doc["activities"]), tuple(doc["roles"]), tuple(doc["mean_durations"]),
                   doc["slots"], doc["count_cap"], doc["duration_scale"])

    def check_compatible(self, defn: ProcessDefinition) -> None:
        if tuple(t.id for t in defn.tasks) != self.activities or tuple(defn.roles) != self.roles:
            raise ValueError("policy encoding does not match this process (activities/roles differ)")


def encode_state(snap, spec: EncodingSpec, acting_role=None) -> np.ndarray:
    """Deterministic vector encoding of a decision instant.

    Queue lengths and in-service counts per activity and free units per role
    are divided by ``count_cap``; busy is a fraction of capacity; clock is now/horizon. The
    per-slot block describes the acting role's K oldest pending tasks.
    """
    lay = spec.layout()
    x = np.zeros(spec.size)
    act_index = {a: i for i, a in enumerate(spec.activities)}
    q = x[lay["queue"]]
    for queue in snap.pending.values():
        for p in queue:
            q[act_index[p.activity]] += 1.0
    q /= spec.count_cap
    served = x[lay["in_service"]]
    for act, n in snap.in_service.items():
        served[act_index[act]] = n / spec.count_cap
    for j, role in enumerate(spec.roles):
        cap = snap.capacity[role]
        n_free = len(snap.free[role])
        x[lay["free"].start + j] = n_free / spec.count_cap
        x[lay["busy"].start + j] = (cap - n_free) / cap
    x[lay["clock"].start] = snap.now / snap.horizon
    x[lay["in_flight"].start] = snap.in_flight / snap.max_in_flight
    if acting_role is not None:
        x[lay["acting_role"].start + spec.roles.index(acting_role)] = 1.0
        base = lay["slots"].start
        for k, p in enumerate(snap.pending[acting_role][:spec.slots]):
            off = base + k * SLOT_FEATURES
            x[off] = 1.0
            x[off + 1] = spec.mean_durations[act_index[p.activity]] / spec.duration_scale
            x[off + 2] = math.tanh((snap.now - p.enqueue_time) / (4.0 * spec.duration_scale))
    return x


def validity_mask(snap, spec: EncodingSpec, acting_role) -> np.ndarray:
    """Assign(k) is valid when slot k is occupied and a unit is free.

    Wait is valid unless nothing else can ever happen (it would idle forever).
    """
    mask = np.zeros(spec.n_actions, dtype=bool)
    if snap.free[acting_role]:
        mask[:min(spec.slots, len(snap.pending[acting_role]))] = True
    mask[spec.wait_action] = snap.has_future_events or not mask[:spec.slots].any()
    return mask


def act_greedy(q_values, mask) -> int:
    """Argmax over valid actions; ties go to the lowest index."""
    q = np.asarray(q_values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no valid action")
    masked = np.where(mask, q, -np.inf)
    return int(np.argmax(masked))

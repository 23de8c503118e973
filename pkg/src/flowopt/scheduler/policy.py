"""Frozen Q-network dispatching policy and its checkpoint format."""
from __future__ import annotations

import numpy as np

from ..neural.checkpoint import make_checkpoint, params_from_doc, read_checkpoint, write_json
from ..sim.engine import Policy
from .qnet import q_values
from .state import EncodingSpec, act_greedy, encode_state, validity_mask


class SlotPolicy(Policy):
    """Runs one decision per free unit: pick a pending slot or Wait.

    Subclasses implement ``choose(state, mask, snapshot) -> action``. Chosen
    tasks are started directly on the simulator so every later decision in
    the same instant sees the updated queues.
    """

    def __init__(self, spec: EncodingSpec):
        self.spec = spec

    def choose(self, state, mask, snap) -> int:
        raise NotImplementedError

    def dispatch(self, sim):
        spec = self.spec
        for role in spec.roles:
            while sim.free[role] and sim.pending[role]:
                snap = sim.snapshot()
                state = encode_state(snap, spec, role)
                mask = validity_mask(snap, spec, role)
                a = self.choose(state, mask, snap)
                if not mask[a]:
                    raise RuntimeError(f"invalid action {a} chosen")
                if a == spec.wait_action:
                    break
                sim.start_task(sim.pending[role][a], sim.free[role][0])
        return []


class SchedulerPolicy(SlotPolicy):
    """Greedy policy over a frozen Q-network."""

    name = "Learned"

    def __init__(self, spec: EncodingSpec, params: dict, hidden=(64, 64), history=None, config=None):
        super().__init__(spec)
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self.hidden = tuple(hidden)
        self.history = list(history or [])
        self.config = dict(config or {})

    def choose(self, state, mask, snap) -> int:
        return act_greedy(q_values(self.params, state), mask)

    def act(self, state, mask) -> int:
        return act_greedy(q_values(self.params, state), mask)

    def check_compatible(self, defn) -> None:
        self.spec.check_compatible(defn)

    def save(self, path=None) -> dict:
        arch = {"state_size": self.spec.size, "hidden": list(self.hidden),
                "n_actions": self.spec.n_actions}
        doc = make_checkpoint("scheduler", arch, self.params, encoding=self.spec.to_doc(),
                              action_space={"slots": self.spec.slots, "wait": self.spec.wait_action},
                              config=self.config, history=self.history)
        if path is not None:
            write_json(doc, path)
        return doc

    @classmethod
    def load(cls, source) -> "SchedulerPolicy":
        doc = read_checkpoint(source, "scheduler")
        spec = EncodingSpec.from_doc(doc["encoding"])
        return cls(spec, params_from_doc(doc["params"]), tuple(doc["architecture"]["hidden"]),
                   doc.get("history"), doc.get("config"))

"""Uniform experience replay over a fixed-size ring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s2: np.ndarray
    done: bool
    mask2: np.ndarray  # valid actions in s2
    discount: float = 1.0  # applied to the bootstrap term when time-discounting


class ReplayBuffer:
    def __init__(self, capacity: int, state_size: int, n_actions: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_size))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_size))
        self.done = np.zeros(capacity, dtype=bool)
        self.mask2 = np.zeros((capacity, n_actions), dtype=bool)
        self.discount = np.ones(capacity)
        self.size = 0
        self._next = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        if not np.isfinite(t.r):
            raise ValueError("reward must be finite")
        i = self._next
        self.s[i], self.a[i], self.r[i] = t.s, t.a, t.r
        self.s2[i], self.done[i], self.mask2[i] = t.s2, t.done, t.mask2
        self.discount[i] = t.discount
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> dict:
        if batch_size > self.size:
            raise ValueError(f"batch of {batch_size} from a buffer of {self.size}")
        idx = self.rng.choice(self.size, size=batch_size, replace=False)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "s2": self.s2[idx],
                "done": self.done[idx], "mask2": self.mask2[idx], "discount": self.discount[idx]}

    def transitions(self) -> list:
        """Stored transitions, oldest first."""
        start = self._next if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [Transition(self.s[i].copy(), int(self.a[i]), float(self.r[i]), self.s2[i].copy(),
                           bool(self.done[i]), self.mask2[i].copy(), float(self.discount[i])) for i in order]

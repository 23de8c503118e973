"""Q-network (tanh MLP), Double DQN targets and the MSE update."""
from __future__ import annotations

import numpy as np

from ..neural import core
from ..neural.core import ShapeMismatch

PREFIX = "q."


def init_qnet(n_in: int, hidden: tuple, n_actions: int, rng) -> dict:
    return core.mlp_init([n_in, *hidden, n_actions], rng, PREFIX)


def n_layers(params: dict) -> int:
    return sum(1 for k in params if k.startswith(PREFIX + "W"))


def q_values(params: dict, states) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    single = states.ndim == 1
    out, _ = core.mlp_forward(params, np.atleast_2d(states), n_layers(params), PREFIX)
    return out[0] if single else out


def same_architecture(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(a[k].shape == b[k].shape for k in a)


def q_targets_double(rewards, next_states, dones, next_masks, online: dict, target: dict,
                     gamma: float, discounts=None) -> np.ndarray:
    """y = r for terminal rows, else r + gamma * Q_target(s2, argmax_valid Q_online(s2, .)).

    ``discounts`` optionally replaces gamma per row (elapsed-time discounting).
    """
    if not same_architecture(online, target):
        raise ShapeMismatch("online and target networks differ in architecture")
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    next_masks = np.asarray(next_masks, dtype=bool)
    y = rewards.copy()
    live = ~dones & next_masks.any(axis=1)
    if not live.any() or (discounts is None and gamma == 0.0):
        return y
    s2 = np.asarray(next_states, dtype=np.float64)[live]
    q_on = np.where(next_masks[live], q_values(online, s2), -np.inf)
    best = np.argmax(q_on, axis=1)
    q_tg = q_values(target, s2)
    g = gamma if discounts is None else np.asarray(discounts, dtype=np.float64)[live]
    y[live] += g * q_tg[np.arange(len(best)), best]
    return y


def td_loss_and_grads(params: dict, states, actions, targets):
    """Mean squared error between Q(s, a) and y, with parameter gradients."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    n = n_layers(params)
    q, acts = core.mlp_forward(params, states, n, PREFIX)
    rows = np.arange(len(actions))
    err = q[rows, actions] - np.asarray(targets, dtype=np.float64)
    loss = float(np.mean(err * err))
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / len(actions)
    grads, _ = core.mlp_backward(params, acts, dq, n, PREFIX)
    return loss, grads

"""Central finite-difference gradient verification."""
from __future__ import annotations

import math

import numpy as np


class NonFiniteLoss(ValueError):
    pass


def grad_check(loss_and_grads, params: dict, step: float = 1e-5, names=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grads(params) -> (loss, grads)``. Relative error per
    coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    base = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    loss, grads = loss_and_grads(base)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    worst = 0.0
    for name in names or list(base):
        p = base[name]
        flat = p.reshape(-1)
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            lp, _ = loss_and_grads(base)
            flat[idx] = orig - step
            lm, _ = loss_and_grads(base)
            flat[idx] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NonFiniteLoss(f"loss not finite around {name}[{idx}]")
            numeric = (lp - lm) / (2.0 * step)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst

"""Nesterov-accelerated Adam."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class NadamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def nadam_update(param, grad, m, v, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-7):
    """One Nadam step on a single tensor; returns (param, m, v)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1 ** t
    m_hat = m / bc1
    v_hat = v / (1.0 - beta2 ** t)
    step = lr * (beta1 * m_hat + (1.0 - beta1) * grad / bc1) / (np.sqrt(v_hat) + eps)
    return param - step, m, v


def nadam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-7):
    """Update every tensor in ``params`` (dict key -> array) in place; advances ``state.t``."""
    state.t += 1
    for key, p in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        m = state.m.get(key, np.zeros(p.shape))
        v = state.v.get(key, np.zeros(p.shape))
        new, state.m[key], state.v[key] = nadam_update(p.astype(np.float64), g, m, v, state.t, lr, beta1, beta2, eps)
        params[key] = new.astype(p.dtype)
    return params, state

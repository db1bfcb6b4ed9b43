"""Adam with bias correction."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **kwargs,
        )


def adam_step(params: List[Tensor], state: AdamState, lr: float):
    """Apply one bias-corrected Adam update in place.

    Moments are kept in the parameter dtype; the update itself is evaluated
    in float64.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name or p.shape} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        g = p.grad.astype(np.float64)
        m = b1 * state.m[i].astype(np.float64) + (1.0 - b1) * g
        v = b2 * state.v[i].astype(np.float64) + (1.0 - b2) * g * g
        state.m[i] = m.astype(p.data.dtype)
        state.v[i] = v.astype(p.data.dtype)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data = (p.data.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


def zero_grad(params):
    for p in params:
        p.grad = None

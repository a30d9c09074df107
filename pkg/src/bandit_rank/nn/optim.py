from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ops import DimensionError
from .tape import Parameter


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64), **hyper)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new arrays; inputs are untouched."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise DimensionError(f"params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


class Adam:
    """Adam over a list of :class:`Parameter`, updating values in place."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        hyper = dict(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        self.states = {p: AdamState.zeros_like(p.value, **hyper) for p in self.params}

    def step(self, grads: dict[Parameter, np.ndarray]):
        for p in self.params:
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.value)
            p.value, self.states[p] = adam_step(p.value, g, self.states[p])

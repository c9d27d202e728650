from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Parameter


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Parameter], **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
        return state


def adam_step(params: Sequence[Parameter], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, then reset gradients to zero.

    ``params`` must be the same sequence the state was created for.
    """
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ValueError(f"Adam state tracks {len(state.m)} parameters, got {len(params)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.value.shape:
            raise ValueError(f"Adam moment shape {m.shape} does not match {p.name} {p.value.shape}")
        if p.trainable:
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.zero_grad()
    return state

"""Parameter bookkeeping and the small dense building blocks shared by modules."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .numcore import Parameter, ops


class ParamSet:
    """Ordered, uniquely named collection of parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        p = Parameter(value, name=name, trainable=trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self._params.items():
            if state[k].shape != p.value.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.value.shape}")
            p.value[...] = state[k]


def xavier_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    lim = xavier_limit(fan_in, fan_out)
    return rng.uniform(-lim, lim, size=shape if shape is not None else (fan_in, fan_out))


def add_linear(ps: ParamSet, rng, name: str, n_in: int, n_out: int) -> None:
    ps.add(f"{name}.w", xavier_uniform(rng, n_in, n_out))
    ps.add(f"{name}.b", np.zeros(n_out))


def linear(ps: ParamSet, name: str, x):
    return ops.add(ops.matmul(x, ps[f"{name}.w"]), ps[f"{name}.b"])


def add_mlp(ps: ParamSet, rng, name: str, n_in: int, n_hidden: int, n_out: int) -> None:
    add_linear(ps, rng, f"{name}.0", n_in, n_hidden)
    add_linear(ps, rng, f"{name}.1", n_hidden, n_out)


def mlp(ps: ParamSet, name: str, x, dropout: float = 0.0, rng=None, training: bool = False):
    """One tanh hidden layer, linear output."""
    h = ops.tanh(linear(ps, f"{name}.0", x))
    h = ops.dropout(h, dropout, rng, training)
    return linear(ps, f"{name}.1", h)

"""Tensors, parameters and the define-by-run tape.

A :class:`Tape` records every primitive executed while it is active.  Calling
:func:`backward` walks the recording in reverse and accumulates gradients into
the trainable :class:`Parameter` objects that took part in the computation.
Outside an active tape, primitives compute values only.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64

_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class TapeError(RuntimeError):
    """Misuse of a tape (wrong tape, non-scalar loss, ...)."""


class Parameter:
    """A learnable array together with its accumulated gradient."""

    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, value, name: str = "", trainable: bool = True):
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class Tensor:
    """An immutable value, optionally linked to a node on a tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: int = -1):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.node >= 0

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]
    param: Optional[Parameter] = None


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in execution order, so the list is already a
    topological order of the computation graph.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def leaf(self, param: Parameter) -> Tensor:
        """Tensor view of ``param`` on this tape (one node per parameter)."""
        key = id(param)
        hit = self._leaves.get(key)
        if hit is not None:
            return hit
        if not param.trainable:
            t = Tensor(param.value)
        else:
            self.nodes.append(_Node("parameter", (), None, param))
            t = Tensor(param.value, self, len(self.nodes) - 1)
        self._leaves[key] = t
        return t

    def record(self, op: str, inputs: Sequence[Tensor], data: np.ndarray, vjp) -> Tensor:
        ids = tuple(t.node for t in inputs)
        if not any(i >= 0 for i in ids):
            return Tensor(data)
        self.nodes.append(_Node(op, ids, vjp))
        return Tensor(data, self, len(self.nodes) - 1)


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def lift(x, tape: Optional[Tape] = None) -> Tensor:
    """Convert parameters, arrays and scalars into tensors."""
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Parameter):
        tape = tape if tape is not None else active_tape()
        if tape is None:
            return Tensor(x.value)
        return tape.leaf(x)
    return Tensor(x)


def backward(tape: Tape, loss: Tensor) -> list[Parameter]:
    """Accumulate d(loss)/d(param) into every trainable parameter on ``tape``.

    Returns the parameters that received a gradient, in tape order.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape or not 0 <= loss.node < len(tape.nodes):
        raise TapeError("loss node is not on this tape")
    if loss.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    touched: list[Parameter] = []
    for idx in range(loss.node, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        if node.param is not None:
            if node.param.trainable:
                node.param.grad += g
                touched.append(node.param)
            continue
        for src, gi in zip(node.inputs, node.vjp(g)):
            if src < 0 or gi is None:
                continue
            prev = grads.get(src)
            grads[src] = gi if prev is None else prev + gi
    touched.reverse()
    return touched

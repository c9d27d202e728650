"""Differentiable primitives.

Every primitive accepts :class:`Tensor`, :class:`Parameter`, numpy arrays or
scalars, works on arbitrary leading (batch) dimensions where that makes sense,
and records a vector-Jacobian product on the active tape.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .tensor import DTYPE, ShapeError, Tape, Tensor, active_tape, lift


def _prepare(*xs) -> tuple[Optional[Tape], list[Tensor]]:
    tape = None
    for x in xs:
        t = getattr(x, "tape", None)
        if t is not None:
            if tape is not None and t is not tape:
                raise ShapeError("operands belong to different tapes")
            tape = t
    if tape is None:
        tape = active_tape()
    return tape, [lift(x, tape) for x in xs]


def _emit(tape, op, inputs, data, vjp) -> Tensor:
    if tape is None:
        return Tensor(data)
    return tape.record(op, inputs, data, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    tape, (a, b) = _prepare(a, b)
    _broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit(tape, "add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    tape, (a, b) = _prepare(a, b)
    _broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit(tape, "sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def hadamard(a, b) -> Tensor:
    tape, (a, b) = _prepare(a, b)
    _broadcast("hadamard", a, b)
    ad, bd = a.data, b.data
    return _emit(tape, "hadamard", (a, b), ad * bd,
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(x, c: float) -> Tensor:
    """Multiply by a constant (no gradient w.r.t. ``c``)."""
    tape, (x,) = _prepare(x)
    c = float(c)
    return _emit(tape, "scale", (x,), x.data * c, lambda g: (g * c,))


def tanh(x) -> Tensor:
    tape, (x,) = _prepare(x)
    y = np.tanh(x.data)
    return _emit(tape, "tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def square(x) -> Tensor:
    tape, (x,) = _prepare(x)
    xd = x.data
    return _emit(tape, "square", (x,), xd * xd, lambda g: (2.0 * xd * g,))


def log(x, floor: Optional[float] = None) -> Tensor:
    """Natural log; with ``floor`` evaluates ``log(max(x, floor))``."""
    tape, (x,) = _prepare(x)
    xd = x.data
    if floor is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(xd)
        return _emit(tape, "log", (x,), y, lambda g: (g / xd,))
    clipped = np.maximum(xd, floor)
    live = xd > floor
    return _emit(tape, "log", (x,), np.log(clipped), lambda g: (np.where(live, g / clipped, 0.0),))


def softmax(x, axis: int = -1) -> Tensor:
    tape, (x,) = _prepare(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _emit(tape, "softmax", (x,), s, vjp)


def dropout(x, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout: kept activations are divided by the keep probability."""
    if not training or rate <= 0.0:
        return lift(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    tape, (x,) = _prepare(x)
    keep = 1.0 - rate
    mask = (rng.random(x.shape) >= rate) / keep
    return _emit(tape, "dropout", (x,), x.data * mask, lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    tape, (x,) = _prepare(x)
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(tape, "sum", (x,), x.data.sum(axis=axis), vjp)


def mean(x, axis=None) -> Tensor:
    tape, (x,) = _prepare(x)
    shape = x.shape
    n = x.size if axis is None else shape[axis]
    if n == 0:
        raise ShapeError(f"mean: empty reduction over shape {shape}")

    def vjp(g):
        if axis is None:
            return (np.full(shape, float(np.asarray(g).reshape(-1)[0]) / n),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)

    return _emit(tape, "mean", (x,), x.data.mean(axis=axis), vjp)


def max_pool_rows(x, mask=None) -> Tensor:
    """Column-wise maximum over the rows of ``(..., n, H)``.

    ``mask`` (shape ``(..., n)``, True = valid row) excludes padding rows.
    The gradient flows only to the first arg-max row of each column.
    """
    tape, (x,) = _prepare(x)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"max_pool_rows: need a non-empty (..., n, H) input, got {x.shape}")
    xd = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape[:-1]:
            raise ShapeError(f"max_pool_rows: mask shape {mask.shape} vs input {x.shape}")
        if not mask.any(axis=-1).all():
            raise ShapeError("max_pool_rows: a row group is entirely masked")
        xd = np.where(mask[..., None], xd, -np.inf)
    arg = xd.argmax(axis=-2)
    out = np.take_along_axis(xd, arg[..., None, :], axis=-2)[..., 0, :]
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, arg[..., None, :], g[..., None, :], axis=-2)
        return (gx,)

    return _emit(tape, "max_pool_rows", (x,), out, vjp)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supported layouts: ``(..., K) @ (K, N)``, ``(M, K) @ (K,)`` and batched
    ``(..., M, K) @ (..., K, N)`` with identical leading dimensions.
    """
    tape, (a, b) = _prepare(a, b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    k_b = bd.shape[0] if bd.ndim == 1 else bd.shape[-2]
    if ad.shape[-1] != k_b:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    if bd.ndim == 2:
        out = ad @ bd

        def vjp(g):
            ga = g @ bd.T
            if ad.ndim == 1:
                gb = np.outer(ad, g)
            else:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, bd.shape[1])
            return ga, gb

    elif bd.ndim == 1:
        if ad.ndim != 2:
            raise ShapeError(f"matmul: vector right operand needs a matrix, got {a.shape} and {b.shape}")
        out = ad @ bd

        def vjp(g):
            return np.outer(g, bd), ad.T @ g

    else:
        if ad.shape[:-2] != bd.shape[:-2] or ad.ndim != bd.ndim:
            raise ShapeError(f"matmul: batch dimensions differ, shapes {a.shape} and {b.shape}")
        out = ad @ bd

        def vjp(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _emit(tape, "matmul", (a, b), out, vjp)


def outer_product(a, b) -> Tensor:
    """``(..., G)`` x ``(..., H)`` -> ``(..., G, H)`` with ``out[g, h] = a[g] * b[h]``."""
    tape, (a, b) = _prepare(a, b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"outer_product: leading dimensions differ, shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = ad[..., :, None] * bd[..., None, :]

    def vjp(g):
        return (g * bd[..., None, :]).sum(axis=-1), (g * ad[..., :, None]).sum(axis=-2)

    return _emit(tape, "outer_product", (a, b), out, vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tape, ts = _prepare(*tensors)
    if not ts:
        raise ShapeError("concat: no inputs")
    ref = ts[0].shape
    ax = axis % len(ref) if ref else 0
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return _emit(tape, "concat", ts, out, lambda g: np.split(g, cuts, axis=ax))


def flatten_rowmajor(x) -> Tensor:
    """``(..., G, H)`` -> ``(..., G*H)``; element ``(g, h)`` lands at ``g*H + h``."""
    tape, (x,) = _prepare(x)
    if x.ndim < 2:
        raise ShapeError(f"flatten_rowmajor: need a matrix, got shape {x.shape}")
    shape = x.shape
    out = x.data.reshape(shape[:-2] + (shape[-2] * shape[-1],))
    return _emit(tape, "flatten_rowmajor", (x,), out, lambda g: (g.reshape(shape),))


def reshape(x, shape) -> Tensor:
    tape, (x,) = _prepare(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _emit(tape, "reshape", (x,), out, lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    tape, (x,) = _prepare(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort([a % x.ndim for a in axes]))
    return _emit(tape, "transpose", (x,), x.data.transpose(axes), lambda g: (g.transpose(inv),))


# ---------------------------------------------------------------- indexing


def embedding_gather(table, ids) -> Tensor:
    """Rows of a ``(V, H)`` table selected by an integer array of any shape."""
    tape, (table,) = _prepare(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding_gather: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_gather: ids outside [0, {table.shape[0]}) for table {table.shape}")
    shape = table.shape
    flat = ids.reshape(-1)

    def vjp(g):
        gt = np.zeros(shape)
        np.add.at(gt, flat, g.reshape(-1, shape[1]))
        return (gt,)

    return _emit(tape, "embedding_gather", (table,), table.data[ids], vjp)


def gather_rows(x, idx) -> Tensor:
    """Select rows: ``(..., T, H)`` with ``(..., U)`` indices -> ``(..., U, H)``."""
    tape, (x,) = _prepare(x)
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim < 2 or idx.shape[:-1] != x.shape[:-2]:
        raise ShapeError(f"gather_rows: index shape {idx.shape} vs input {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[-2]):
        raise ShapeError(f"gather_rows: row index outside [0, {x.shape[-2]})")
    shape = x.shape
    out = np.take_along_axis(x.data, idx[..., None], axis=-2)

    def vjp(g):
        gx = np.zeros(shape)
        lead = np.indices(idx.shape, sparse=True)[:-1]
        np.add.at(gx, (*lead, idx), g)
        return (gx,)

    return _emit(tape, "gather_rows", (x,), out, vjp)


def pick(x, idx) -> Tensor:
    """``out[...] = x[..., idx[...]]`` along the last axis."""
    tape, (x,) = _prepare(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != x.shape[:-1]:
        raise ShapeError(f"pick: index shape {idx.shape} vs input {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[-1]):
        raise ShapeError(f"pick: index outside [0, {x.shape[-1]})")
    shape = x.shape
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx,)

    return _emit(tape, "pick", (x,), out, vjp)


# ---------------------------------------------------------------- composite layers


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply an elementwise affine map."""
    tape, (x, gain, bias) = _prepare(x, gain, bias)
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise ShapeError(f"layer_norm: input {x.shape} with gain {gain.shape} and bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    gd = gain.data
    out = xhat * gd + bias.data

    def vjp(g):
        gh = g * gd
        gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                     - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(tape, "layer_norm", (x, gain, bias), out, vjp)


def attention_weights(q, k, key_mask=None) -> np.ndarray:
    """Row-stochastic attention matrix (no recording)."""
    qd, kd = lift(q).data, lift(k).data
    scores = qd @ np.swapaxes(kd, -1, -2) / math.sqrt(qd.shape[-1])
    if key_mask is not None:
        scores = np.where(np.asarray(key_mask, bool)[..., None, :], scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def scaled_dot_attention(q, k, v, key_mask=None) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` over ``(..., T, d)`` operands.

    ``key_mask`` broadcasts against ``(..., Tk)``; False keys get zero weight.
    """
    tape, (q, k, v) = _prepare(q, k, v)
    if q.ndim < 2 or q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1] \
            or q.shape[:-2] != k.shape[:-2]:
        raise ShapeError(f"scaled_dot_attention: shapes q{q.shape} k{k.shape} v{v.shape}")
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if not key_mask.any(axis=-1).all():
            raise ShapeError("scaled_dot_attention: every key is masked for some query row")
    qd, kd, vd = q.data, k.data, v.data
    inv = 1.0 / math.sqrt(qd.shape[-1])
    a = attention_weights(qd, kd, key_mask)
    out = a @ vd

    def vjp(g):
        ga = g @ np.swapaxes(vd, -1, -2)
        gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True))
        gq = (gs @ kd) * inv
        gk = (np.swapaxes(gs, -1, -2) @ qd) * inv
        gv = np.swapaxes(a, -1, -2) @ g
        return gq, gk, gv

    return _emit(tape, "scaled_dot_attention", (q, k, v), out, vjp)


OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "tanh": tanh,
    "softmax": softmax,
    "log": log,
    "hadamard": hadamard,
    "outer_product": outer_product,
    "flatten_rowmajor": flatten_rowmajor,
    "max_pool_rows": max_pool_rows,
    "mean": mean,
    "sum": sum,
    "square": square,
    "scale": scale,
    "embedding_gather": embedding_gather,
    "gather_rows": gather_rows,
    "pick": pick,
    "reshape": reshape,
    "transpose": transpose,
    "dropout": dropout,
    "layer_norm": layer_norm,
    "scaled_dot_attention": scaled_dot_attention,
}


def forward(op_kind: str, *inputs, **attrs) -> Tensor:
    """Apply the primitive named ``op_kind``."""
    fn = OPS.get(op_kind)
    if fn is None:
        raise KeyError(f"unknown op kind {op_kind!r}; known: {sorted(OPS)}")
    return fn(*inputs, **attrs)


__all__ = ["DTYPE", "OPS", "forward", *[k for k in OPS if k != "concat"], "concat", "attention_weights"]

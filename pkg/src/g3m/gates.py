"""Intent-category (IC) and NPS-category (NC) gates.

The IC gate turns pooled utterance features and the dialog context into a
G-dimensional weight vector and spreads the context over it with an outer
product.  The NC gate scales category features by a row of the normalised
NPS-interval x category co-occurrence matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .layers import ParamSet, add_mlp, mlp, xavier_uniform
from .numcore import Tensor, ops

log = logging.getLogger(__name__)

N_INTERVALS = 10


class GateError(ValueError):
    pass


def init_ic_params(ps: ParamSet, rng, hidden: int, g: int) -> None:
    if g < 1:
        raise GateError(f"gate dimension G must be >= 1, got {g}")
    ps.add("ic.V", xavier_uniform(rng, hidden, g, shape=(g, hidden)))
    ps.add("ic.W", xavier_uniform(rng, hidden, hidden))


def init_nc_params(ps: ParamSet, rng, hidden: int, g: int, n_categories: int) -> None:
    add_mlp(ps, rng, "nc.mlp", g * hidden, hidden, n_categories)


def ic_gate(t_cls, t_new, ps: ParamSet, utt_mask=None, force_ones: bool = False
            ) -> tuple[Tensor, Tensor]:
    """Return ``(g_I, t_ic)``.

    ``T^I`` is the column-wise max over the utterance rows of ``t_new``;
    ``g_I = V tanh(t_cls + W T^I)`` and ``t_ic = flatten(g_I t_cls^T)``.
    Inputs may carry a leading batch axis.  ``force_ones`` replaces ``g_I``
    by a vector of ones (the gate-free variant).
    """
    t_new_shape = getattr(t_new, "shape", np.shape(t_new))
    if len(t_new_shape) < 2 or t_new_shape[-2] == 0:
        raise GateError("ic_gate needs at least one utterance")
    v = ps["ic.V"]
    g = v.shape[0]
    if force_ones:
        lead = getattr(t_cls, "shape", np.shape(t_cls))[:-1]
        g_i = Tensor(np.ones(lead + (g,)))
    else:
        pooled = ops.max_pool_rows(t_new, utt_mask)
        inner = ops.tanh(ops.add(t_cls, ops.matmul(pooled, ops.transpose(ps["ic.W"]))))
        g_i = ops.matmul(inner, ops.transpose(v))
    t_ic = ops.flatten_rowmajor(ops.outer_product(g_i, t_cls))
    return g_i, t_ic


def nps_to_interval(nps_raw) -> Union[int, np.ndarray]:
    """Index of the unit-width NPS interval, ``min(floor(clamp(x, 0, 10)), 9)``."""
    arr = np.asarray(nps_raw, dtype=np.float64)
    if np.isnan(arr).any():
        raise GateError("NPS value is NaN")
    idx = np.minimum(np.floor(np.clip(arr, 0.0, 10.0)), N_INTERVALS - 1).astype(np.int64)
    return int(idx) if idx.ndim == 0 else idx


@dataclass(frozen=True)
class CooccurrenceMatrix:
    counts: np.ndarray   # (10, C) raw counts
    D: np.ndarray        # (10, C) min-max normalised

    @property
    def n_categories(self) -> int:
        return int(self.D.shape[1])

    def row(self, interval: int) -> np.ndarray:
        if not 0 <= interval < N_INTERVALS:
            raise GateError(f"interval index {interval} outside 0..{N_INTERVALS - 1}")
        return self.D[interval]

    def uniform_row(self) -> np.ndarray:
        return self.D.mean(axis=0)


def normalise_counts(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    lo, hi = counts.min(), counts.max()
    if hi == lo:
        log.warning("co-occurrence counts are all equal; using a constant 0.5 matrix")
        return np.full(counts.shape, 0.5)
    return (counts - lo) / (hi - lo)


def build_cooccurrence(samples: Iterable, n_categories: int, category_id=None) -> CooccurrenceMatrix:
    """Count (NPS interval, category) pairs over NPS-labelled samples.

    Each sample needs ``nps_raw`` (0-10 scale, None when unlabelled) and
    ``category``; ``category_id`` maps the latter to an index when it is not
    already an int.
    """
    counts = np.zeros((N_INTERVALS, n_categories))
    n = 0
    for s in samples:
        if s.nps_raw is None:
            continue
        c = s.category if category_id is None else category_id(s.category)
        counts[nps_to_interval(s.nps_raw), int(c)] += 1
        n += 1
    if n == 0:
        raise GateError("no NPS-labelled samples to build the co-occurrence matrix")
    return CooccurrenceMatrix(counts, normalise_counts(counts))


@dataclass(frozen=True)
class GroundTruth:
    nps_raw: float


@dataclass(frozen=True)
class Predicted:
    nps_raw: float


@dataclass(frozen=True)
class Uniform:
    pass


RowSelector = Union[GroundTruth, Predicted, Uniform]


def select_row(selector: RowSelector, cooc: CooccurrenceMatrix) -> np.ndarray:
    if isinstance(selector, (GroundTruth, Predicted)):
        return cooc.row(nps_to_interval(selector.nps_raw))
    if isinstance(selector, Uniform):
        return cooc.uniform_row()
    raise GateError(f"unknown row selector {selector!r}")


def select_rows(selectors: Sequence[RowSelector], cooc: CooccurrenceMatrix) -> np.ndarray:
    return np.stack([select_row(s, cooc) for s in selectors])


def category_features(t_ic, ps: ParamSet, dropout: float = 0.0, rng=None, training: bool = False) -> Tensor:
    """``T^C``: the NC-gate MLP applied to ``t_ic``."""
    return mlp(ps, "nc.mlp", t_ic, dropout, rng, training)


def nc_gate(t_ic, selector: Union[RowSelector, Sequence[RowSelector], np.ndarray],
            cooc: Optional[CooccurrenceMatrix], ps: ParamSet, dropout: float = 0.0,
            rng=None, training: bool = False) -> Tensor:
    """``D_i * MLP(t_ic)`` with the row ``D_i`` picked by ``selector``.

    ``selector`` may also be an explicit row array (e.g. all ones).
    """
    t_c = category_features(t_ic, ps, dropout, rng, training)
    if isinstance(selector, np.ndarray):
        rows = selector
    elif isinstance(selector, (GroundTruth, Predicted, Uniform)):
        rows = select_row(selector, cooc)
    else:
        rows = select_rows(selector, cooc)
    return ops.hadamard(t_c, rows)

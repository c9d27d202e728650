from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class MetricError(ValueError):
    pass


def rmse(preds: Sequence[float], truths: Sequence[float]) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise MetricError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise MetricError("rmse of an empty set")
    return float(np.sqrt(np.mean((t - p) ** 2)))


def confusion_counts(preds, truths, n_classes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.int64)
    t = np.asarray(truths, dtype=np.int64)
    if p.shape != t.shape:
        raise MetricError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise MetricError("micro-F1 of an empty set")
    for name, arr in (("prediction", p), ("truth", t)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise MetricError(f"{name} label outside [0, {n_classes})")
    hit = p == t
    tp = np.bincount(t[hit], minlength=n_classes)
    fp = np.bincount(p[~hit], minlength=n_classes)
    fn = np.bincount(t[~hit], minlength=n_classes)
    return tp, fp, fn


def micro_f1(preds, truths, n_classes: int) -> float:
    """sum(TP) / (sum(TP) + sum(FP)) over classes."""
    tp, fp, _ = confusion_counts(preds, truths, n_classes)
    return float(tp.sum() / (tp.sum() + fp.sum()))


@dataclass
class MetricReport:
    rmse: float              # z-scored space
    rmse_raw: float          # 0-10 space (before clamping)
    micro_f1: float
    n: int
    n_nps: int
    tp: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))
    fp: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))
    fn: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))

    def as_row(self) -> dict:
        return {"rmse_z": self.rmse, "rmse_raw": self.rmse_raw, "micro_f1": self.micro_f1, "n": self.n}


def metric_report(nps_pred_z, nps_true_z, cat_pred, cat_true, n_classes: int,
                  sigma: float = 1.0) -> MetricReport:
    """RMSE over the NPS-labelled subset (NaN if none) and micro-F1 over all."""
    tp, fp, fn = confusion_counts(cat_pred, cat_true, n_classes)
    if len(nps_true_z):
        r = rmse(nps_pred_z, nps_true_z)
    else:
        r = float("nan")
    return MetricReport(
        rmse=r, rmse_raw=r * sigma, micro_f1=float(tp.sum() / (tp.sum() + fp.sum())),
        n=int(len(cat_true)), n_nps=int(len(nps_true_z)), tp=tp, fp=fp, fn=fn,
    )

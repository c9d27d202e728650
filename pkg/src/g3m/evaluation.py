"""Cross-validation, the variant ablation suite and the gate-dimension sweep.

Every run inside one call shares fold assignments and the model seed, so
variants differ only in the gating switches (or G) under comparison.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import DialogSession, kfold, split
from .metrics import MetricReport
from .model import VARIANTS, TrainConfig, evaluate, prepare, train

log = logging.getLogger(__name__)

FOLDS_OVER = ("corpus", "test")
ABLATION_HEADER = ("variant", "fold", "rmse_z", "rmse_raw", "micro_f1")
SWEEP_HEADER = ("g", "fold", "rmse_z", "micro_f1")


@dataclass(frozen=True)
class Fold:
    index: int
    train: list
    valid: list
    test: list
    seed: int


@dataclass
class CVResult:
    variant: str
    reports: list[MetricReport] = field(default_factory=list)

    def _col(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports], dtype=np.float64)

    def mean(self, name: str) -> float:
        return float(np.mean(self._col(name)))

    def std(self, name: str) -> float:
        return float(np.std(self._col(name)))


def kfold_splits(sessions: Sequence[DialogSession], k: int, seed: int) -> list[Fold]:
    """Fold ``i`` is the test set; the rest is divided 8:1 into train and valid."""
    folds = kfold(list(sessions), k, seed)
    out = []
    for i, test in enumerate(folds):
        rest = [s for j, f in enumerate(folds) if j != i for s in f]
        order = np.random.default_rng([seed, i]).permutation(len(rest))
        n_valid = max(1, int(round(len(rest) / 9)))
        valid = [rest[j] for j in order[:n_valid]]
        train_ = [rest[j] for j in order[n_valid:]]
        out.append(Fold(i, train_, valid, test, seed))
    return out


def seed_splits(sessions: Sequence[DialogSession], seeds: Sequence[int]) -> list[Fold]:
    """One 8:1:1 split per seed; the seed also drives model initialisation."""
    return [Fold(i, *split(list(sessions), s), seed=s) for i, s in enumerate(seeds)]


def _run_fold(fold: Fold, cfg: TrainConfig, reseed: bool) -> MetricReport:
    cfg = replace(cfg, seed=fold.seed) if reseed else cfg
    data = prepare(fold.train, fold.valid, fold.test)
    result = train(data, cfg)
    report, _, _ = evaluate(result.model, data.test)
    log.info("fold %d variant %s g=%s: rmse_z=%.4f micro_f1=%.4f",
             fold.index, cfg.variant, cfg.g, report.rmse, report.micro_f1)
    return report


def _test_folds(sessions, cfg: TrainConfig, k: int, seed: int) -> list[MetricReport]:
    tr, va, te = split(list(sessions), seed)
    data = prepare(tr, va, te)
    model = train(data, cfg).model
    reports = []
    for part in np.array_split(np.random.default_rng(seed).permutation(len(data.test)), k):
        reports.append(evaluate(model, [data.test[i] for i in part])[0])
    return reports


def cross_validate(sessions: Sequence[DialogSession], cfg: TrainConfig, k: int = 5,
                   folds_over: str = "corpus", seed: Optional[int] = None) -> CVResult:
    """Per-fold train and evaluate for one variant.

    ``folds_over="corpus"`` rotates k folds over all sessions (one training
    run each).  ``"test"`` trains once on an 8:1:1 split and scores k folds of
    the held-out test set.
    """
    if folds_over not in FOLDS_OVER:
        raise ValueError(f"folds_over must be one of {FOLDS_OVER}")
    seed = cfg.seed if seed is None else seed
    if folds_over == "test":
        return CVResult(cfg.variant, _test_folds(sessions, cfg, k, seed))
    folds = kfold_splits(sessions, k, seed)
    return CVResult(cfg.variant, [_run_fold(f, cfg, reseed=False) for f in folds])


def _folds(sessions, cfg, k, seeds) -> tuple[list[Fold], bool]:
    if seeds is not None:
        return seed_splits(sessions, seeds), True
    return kfold_splits(sessions, k, cfg.seed), False


def ablation_suite(sessions: Sequence[DialogSession], cfg: TrainConfig,
                   variants: Sequence[str] = VARIANTS, k: int = 5,
                   seeds: Optional[Sequence[int]] = None) -> dict[str, CVResult]:
    """Train every variant on the same folds.

    With ``seeds`` each fold is a fresh 8:1:1 split and model seed; otherwise
    k-fold over the corpus with ``cfg.seed``.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    folds, reseed = _folds(sessions, cfg, k, seeds)
    out = {}
    for v in variants:
        vcfg = replace(cfg, variant=v)
        out[v] = CVResult(v, [_run_fold(f, vcfg, reseed) for f in folds])
    return out


def sweep_g(sessions: Sequence[DialogSession], cfg: TrainConfig, g_values: Sequence[int],
            k: int = 5, seeds: Optional[Sequence[int]] = None) -> dict[int, CVResult]:
    if not g_values:
        raise ValueError("g_values must be non-empty")
    folds, reseed = _folds(sessions, cfg, k, seeds)
    return {g: CVResult(cfg.variant, [_run_fold(f, replace(cfg, g=g), reseed) for f in folds])
            for g in g_values}


def _write(rows, header, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def ablation_csv(results: dict[str, CVResult], path=None) -> str:
    rows = [(v, i, repr(r.rmse), repr(r.rmse_raw), repr(r.micro_f1))
            for v, res in results.items() for i, r in enumerate(res.reports)]
    return _write(rows, ABLATION_HEADER, path)


def sweep_csv(results: dict[int, CVResult], path=None) -> str:
    rows = [(g, i, repr(r.rmse), repr(r.micro_f1))
            for g, res in results.items() for i, r in enumerate(res.reports)]
    return _write(rows, SWEEP_HEADER, path)


def summary_table(results: dict, key_name: str = "variant") -> str:
    """Mean +- std per row, in the shape of an ablation table."""
    lines = [f"{key_name:<10s} {'RMSE(z)':>17s} {'Micro-F1':>17s}"]
    for key, res in results.items():
        lines.append(f"{str(key):<10s} {res.mean('rmse'):8.4f} +- {res.std('rmse'):.4f} "
                     f"{res.mean('micro_f1'):8.4f} +- {res.std('micro_f1'):.4f}")
    return "\n".join(lines)


def majority_baseline(train_labels: Sequence, test_labels: Sequence) -> float:
    """Micro-F1 of always predicting the most frequent training label."""
    values, counts = np.unique(np.asarray(train_labels), return_counts=True)
    top = values[np.argmax(counts)]
    return float(np.mean(np.asarray(test_labels) == top))

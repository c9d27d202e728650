"""The gated multi-task model: heads, joint loss, training and prediction."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import (
    GREETING,
    DialogSession,
    Sample,
    Utterance,
    Vocabulary,
    ZScore,
    build_samples,
    pack,
    preprocess,
    zscore_fit,
)
from .corpus.text import DEFAULT_M_MAX, PackedInput
from .encoder import Batch, EncoderConfig, collate, encode_batch, init_params
from .gates import (
    CooccurrenceMatrix,
    GroundTruth,
    Predicted,
    Uniform,
    build_cooccurrence,
    ic_gate,
    init_ic_params,
    init_nc_params,
    nc_gate,
    select_rows,
)
from .layers import ParamSet
from .metrics import MetricReport, metric_report
from .numcore import AdamState, Tape, Tensor, adam_step, backward, ops

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_ic", "no_nc", "no_gates")
PROB_FLOOR = 1e-12
FINE_TUNE_LR = 2e-5


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.9
    gamma: float = 0.01
    lr: float = 3e-4
    dropout: float = 0.1
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    variant: str = "full"
    g: Optional[int] = None
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ffn: Optional[int] = None
    m_max: int = DEFAULT_M_MAX

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr >= 0 required")
        if self.g is not None and self.g < 1:
            raise ValueError("G must be >= 1")

    @classmethod
    def fine_tune_preset(cls, **overrides) -> "TrainConfig":
        return cls(**{"lr": FINE_TUNE_LR, **overrides})

    @classmethod
    def reference(cls, **overrides) -> "TrainConfig":
        """Single-core desk scale used by the acceptance runs."""
        base = dict(hidden=32, layers=1, heads=2, m_max=64, lr=1e-3, epochs=5)
        return cls(**{**base, **overrides})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prediction:
    nps_z: float
    nps_raw: float
    cat_probs: np.ndarray
    cat_argmax: int


class G3M:
    """Encoder, IC/NC gates and the two prediction heads.

    ``zscore`` and ``cooc`` are frozen training-split statistics.
    """

    def __init__(self, vocab: Vocabulary, enc_cfg: EncoderConfig, g: int, zscore: ZScore,
                 cooc: CooccurrenceMatrix, variant: str = "full", seed: int = 0,
                 params: Optional[ParamSet] = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if cooc.n_categories != vocab.n_categories:
            raise ValueError("co-occurrence matrix and vocabulary disagree on category count")
        self.vocab = vocab
        self.enc_cfg = enc_cfg
        self.g = g
        self.zscore = zscore
        self.cooc = cooc
        self.variant = variant
        self.train_config: dict = {}
        if params is None:
            params = self.init_params(enc_cfg, g, vocab.n_categories, seed)
        self.params = params

    @staticmethod
    def init_params(enc_cfg: EncoderConfig, g: int, n_categories: int, seed: int) -> ParamSet:
        rng = np.random.default_rng(seed)
        ps = init_params(enc_cfg, rng)
        h = enc_cfg.hidden
        init_ic_params(ps, rng, h, g)
        init_nc_params(ps, rng, h, g, n_categories)
        lim = math.sqrt(6.0 / (h + g * h + 1))
        ps.add("head.nps.w", rng.uniform(-lim, lim, size=h + g * h))
        ps.add("head.nps.b", np.zeros(()))
        c = n_categories
        ps.add("head.cat.w", rng.uniform(-math.sqrt(3.0 / c), math.sqrt(3.0 / c), size=(c, c)))
        ps.add("head.cat.b", np.zeros(c))
        return ps

    # -------------------------------------------------------------- plumbing

    @property
    def n_categories(self) -> int:
        return self.vocab.n_categories

    @property
    def uses_ic(self) -> bool:
        return self.variant in ("full", "no_nc")

    @property
    def uses_nc(self) -> bool:
        return self.variant in ("full", "no_ic")

    def pack(self, sample_or_prefix) -> PackedInput:
        return pack(sample_or_prefix, self.vocab, self.enc_cfg.m_max)

    def nps_raw(self, nps_z):
        return np.clip(self.zscore.invert(np.asarray(nps_z, dtype=np.float64)), 0.0, 10.0)

    # -------------------------------------------------------------- forward

    def forward(self, batch: Batch, selectors: Optional[Sequence] = None, train_mode: bool = False,
                rng: Optional[np.random.Generator] = None) -> tuple[Tensor, Tensor]:
        """Return ``(nps_z (B,), cat_probs (B, C))``.

        ``selectors`` picks co-occurrence rows per sample; None means the
        evaluation rule (row of the model's own predicted raw NPS).
        """
        ps = self.params
        drop = self.enc_cfg.dropout if train_mode else 0.0
        enc = encode_batch(batch, ps, self.enc_cfg, train_mode, rng)
        _, t_ic = ic_gate(enc.t_cls, enc.t_new, ps, enc.utt_mask, force_ones=not self.uses_ic)
        joint = ops.concat([enc.t_cls, t_ic], axis=-1)
        nps_z = ops.add(ops.matmul(joint, ps["head.nps.w"]), ps["head.nps.b"])
        b = batch.size
        if not self.uses_nc:
            rows = np.ones((b, self.n_categories))
        elif selectors is None:
            rows = select_rows([Predicted(float(x)) for x in self.nps_raw(nps_z.data)], self.cooc)
        else:
            rows = select_rows(selectors, self.cooc)
        t_nc = nc_gate(t_ic, rows, self.cooc, ps, drop, rng, train_mode)
        logits = ops.add(ops.matmul(t_nc, ops.transpose(ps["head.cat.w"])), ps["head.cat.b"])
        return nps_z, ops.softmax(logits)

    def predict_batch(self, items: Sequence, mode: str = "eval",
                      nps_raw: Optional[Sequence[Optional[float]]] = None) -> list[Prediction]:
        """Predict for samples or utterance prefixes.

        In ``train`` mode the co-occurrence row comes from ``nps_raw`` (one
        optional ground-truth score per item), without dropout.
        """
        if mode not in ("eval", "train"):
            raise ValueError(f"mode must be 'eval' or 'train', got {mode!r}")
        batch = collate([self.pack(x) for x in items])
        selectors = None
        if mode == "train":
            truth = nps_raw if nps_raw is not None else [getattr(x, "nps_raw", None) for x in items]
            selectors = [Uniform() if v is None else GroundTruth(float(v)) for v in truth]
        nps_z, probs = self.forward(batch, selectors)
        raw = self.nps_raw(nps_z.data)
        return [Prediction(float(nps_z.data[i]), float(raw[i]), probs.data[i].copy(),
                           int(probs.data[i].argmax())) for i in range(batch.size)]

    def predict(self, item, mode: str = "eval", nps_raw: Optional[float] = None) -> Prediction:
        return self.predict_batch([item], mode, None if nps_raw is None else [nps_raw])[0]

    # -------------------------------------------------------------- loss

    def loss(self, nps_z: Tensor, probs: Tensor, y_cat: np.ndarray, y_nps: Sequence[Optional[float]],
             alpha: float, beta: float, gamma: float) -> Tensor:
        return joint_loss(nps_z, probs, y_cat, y_nps, self.params, alpha, beta, gamma)

    def batch_loss(self, samples: Sequence[Sample], cfg: TrainConfig, train_mode: bool = False,
                   rng=None, packed: Optional[Sequence[PackedInput]] = None):
        packed = packed if packed is not None else [self.pack(s) for s in samples]
        batch = collate(packed)
        selectors = [Uniform() if s.nps_raw is None else GroundTruth(s.nps_raw) for s in samples]
        nps_z, probs = self.forward(batch, selectors, train_mode, rng)
        y_cat = np.array([self.vocab.category_id(s.category) for s in samples])
        loss = self.loss(nps_z, probs, y_cat, [s.y_nps for s in samples], cfg.alpha, cfg.beta, cfg.gamma)
        return loss, nps_z, probs


def joint_loss(nps_z, probs, y_cat, y_nps, ps: ParamSet, alpha: float, beta: float, gamma: float) -> Tensor:
    """Cross-entropy + masked squared error + L2 on the head weights.

    Samples without an NPS label add nothing to the squared-error term, whose
    mean runs over labelled samples only.
    """
    n = len(y_cat)
    if n == 0:
        raise ValueError("empty batch")
    logp = ops.log(ops.pick(probs, np.asarray(y_cat)), floor=PROB_FLOOR)
    terms = [ops.scale(ops.sum(logp), -alpha / n)]
    mask = np.array([y is not None for y in y_nps])
    n_nps = int(mask.sum())
    if n_nps:
        target = np.array([0.0 if y is None else y for y in y_nps])
        sq = ops.square(ops.sub(nps_z, target))
        terms.append(ops.scale(ops.sum(ops.hadamard(sq, mask.astype(np.float64))), beta / n_nps))
    if gamma:
        reg = ops.add(ops.sum(ops.square(ps["head.cat.w"])), ops.sum(ops.square(ps["head.nps.w"])))
        terms.append(ops.scale(reg, gamma / 2.0))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return total


# ------------------------------------------------------------------ training


@dataclass
class PreparedData:
    vocab: Vocabulary
    zscore: ZScore
    cooc: CooccurrenceMatrix
    train: list[Sample]
    valid: list[Sample]
    test: list[Sample]


def prepare(train: Sequence[DialogSession], valid: Sequence[DialogSession] = (),
            test: Sequence[DialogSession] = (), vocab: Optional[Vocabulary] = None) -> PreparedData:
    """Greeting stripping, z-score, vocabulary and co-occurrence from the training split."""
    train, _ = preprocess(train)
    valid, _ = preprocess(valid)
    test, _ = preprocess(test)
    zs = zscore_fit([s.nps for s in train if s.nps is not None])
    if vocab is None:
        # labels seen only in held-out data still need ids
        label_src = list(valid) + list(test)
        vocab = Vocabulary.build(
            train,
            extra_intents=[GREETING] + [u.intent for s in label_src for u in s.utterances],
            extra_categories=[s.category for s in label_src] + [c for s in label_src for _, c in s.segments],
        )
    tr = build_samples(train, zs)
    cooc = build_cooccurrence(tr, vocab.n_categories, vocab.category_id)
    return PreparedData(vocab, zs, cooc, tr, build_samples(valid, zs), build_samples(test, zs))


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    rmse: float
    micro_f1: float


@dataclass
class TrainResult:
    model: G3M
    history: list[EpochRecord]
    best_epoch: int
    data: PreparedData

    def history_csv(self) -> str:
        return history_to_csv(self.history)


def history_to_csv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch,split,loss,rmse,micro_f1"]
    for r in history:
        lines.append(f"{r.epoch},{r.split},{r.loss!r},{r.rmse!r},{r.micro_f1!r}")
    return "\n".join(lines) + "\n"


def build_model(data: PreparedData, cfg: TrainConfig) -> G3M:
    enc_cfg = EncoderConfig(
        vocab_size=data.vocab.n_tokens, n_intents=data.vocab.n_intents, hidden=cfg.hidden,
        layers=cfg.layers, heads=cfg.heads, ffn=cfg.ffn, m_max=cfg.m_max, dropout=cfg.dropout,
    )
    g = cfg.g if cfg.g is not None else data.vocab.n_categories
    model = G3M(data.vocab, enc_cfg, g, data.zscore, data.cooc, cfg.variant, seed=cfg.seed)
    model.train_config = cfg.to_dict()
    return model


def make_batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle, then sort within windows of 8 batches by packed length."""
    order = rng.permutation(len(lengths))
    window = batch_size * 8
    batches = []
    for start in range(0, len(order), window):
        chunk = order[start:start + window]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def evaluate(model: G3M, samples: Sequence[Sample], cfg: Optional[TrainConfig] = None,
             batch_size: int = 64, packed: Optional[Sequence[PackedInput]] = None
             ) -> tuple[MetricReport, float, list[Prediction]]:
    """Eval-mode metrics plus teacher-forced loss (NaN when ``cfg`` is None)."""
    packed = packed if packed is not None else [model.pack(s) for s in samples]
    preds: list[Prediction] = []
    losses = []
    order = np.argsort([len(p) for p in packed], kind="stable")
    slot: list[Optional[Prediction]] = [None] * len(samples)
    for start in range(0, len(samples), batch_size):
        idx = order[start:start + batch_size]
        batch = collate([packed[i] for i in idx])
        nps_z, probs = model.forward(batch)
        raw = model.nps_raw(nps_z.data)
        for j, i in enumerate(idx):
            slot[i] = Prediction(float(nps_z.data[j]), float(raw[j]), probs.data[j].copy(),
                                 int(probs.data[j].argmax()))
        if cfg is not None:
            sub = [samples[i] for i in idx]
            loss, _, _ = model.batch_loss(sub, cfg, packed=[packed[i] for i in idx])
            losses.append(loss.item() * len(idx))
    preds = [p for p in slot if p is not None]
    lab = [i for i, s in enumerate(samples) if s.y_nps is not None]
    report = metric_report(
        [preds[i].nps_z for i in lab], [samples[i].y_nps for i in lab],
        [p.cat_argmax for p in preds], [model.vocab.category_id(s.category) for s in samples],
        model.n_categories, model.zscore.sigma,
    )
    loss = sum(losses) / len(samples) if losses else float("nan")
    return report, loss, preds


def train(data: PreparedData, cfg: TrainConfig, model: Optional[G3M] = None) -> TrainResult:
    """Adam training with best-validation-micro-F1 model retention.

    Epoch 0 rows hold the untrained model's (batch-averaged) losses.  Later
    train rows average the minibatch losses seen during the epoch.
    """
    model = model if model is not None else build_model(data, cfg)
    params = model.params.trainable()
    state = AdamState.for_params(params, lr=cfg.lr)
    seq = np.random.SeedSequence(cfg.seed)
    order_rng, drop_rng = (np.random.default_rng(s) for s in seq.spawn(2))
    train_packed = [model.pack(s) for s in data.train]
    valid_packed = [model.pack(s) for s in data.valid]
    lengths = np.array([len(p) for p in train_packed])
    history: list[EpochRecord] = []

    def record_valid(epoch):
        if not data.valid:
            return None
        rep, vloss, _ = evaluate(model, data.valid, cfg, packed=valid_packed)
        history.append(EpochRecord(epoch, "valid", vloss, rep.rmse, rep.micro_f1))
        return rep

    init_rep, init_loss, _ = evaluate(model, data.train, cfg, packed=train_packed)
    history.append(EpochRecord(0, "train", init_loss, init_rep.rmse, init_rep.micro_f1))
    best_key = None
    best_state = model.params.state()
    best_epoch = 0
    rep = record_valid(0)
    if rep is not None:
        best_key = (rep.micro_f1, -_nan_to(rep.rmse))

    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        sq_err, n_nps, hits = 0.0, 0, 0
        for bid, idx in enumerate(make_batches(lengths, cfg.batch_size, order_rng)):
            samples = [data.train[i] for i in idx]
            with Tape() as tape:
                loss, nps_z, probs = model.batch_loss(samples, cfg, True, drop_rng,
                                                      packed=[train_packed[i] for i in idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {bid}")
            backward(tape, loss)
            adam_step(params, state)
            total += value * len(idx)
            count += len(idx)
            for j, s in enumerate(samples):
                hits += int(probs.data[j].argmax() == model.vocab.category_id(s.category))
                if s.y_nps is not None:
                    sq_err += (nps_z.data[j] - s.y_nps) ** 2
                    n_nps += 1
        history.append(EpochRecord(epoch, "train", total / count,
                                   math.sqrt(sq_err / n_nps) if n_nps else float("nan"), hits / count))
        rep = record_valid(epoch)
        if rep is not None:
            key = (rep.micro_f1, -_nan_to(rep.rmse))
            if best_key is None or key > best_key:
                best_key, best_state, best_epoch = key, model.params.state(), epoch
        else:
            best_state, best_epoch = model.params.state(), epoch
    model.params.load_state(best_state)
    return TrainResult(model, history, best_epoch, data)


def _nan_to(x: float, fill: float = math.inf) -> float:
    return fill if math.isnan(x) else x

"""Miniature transformer dialog encoder with role/intent fusion.

The transformer reads the packed token sequence.  Its ``[CLS]`` state is the
dialog context vector; each utterance's ``[SEP]`` state is concatenated with
one-hot role and intent vectors and passed through a tanh MLP to give the
enhanced utterance representation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus.text import PAD_ID, PackedInput
from .layers import ParamSet, add_linear, add_mlp, linear, mlp, xavier_uniform
from .numcore import Tensor, ops

N_ROLES = 2


class EncoderError(ValueError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int
    n_intents: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ffn: Optional[int] = None
    m_max: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.ffn is None:
            self.ffn = 4 * self.hidden
        for name in ("vocab_size", "n_intents", "hidden", "layers", "heads", "ffn", "m_max"):
            if getattr(self, name) <= 0:
                raise EncoderError(f"{name} must be positive")
        if self.hidden % self.heads:
            raise EncoderError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise EncoderError("dropout must lie in [0, 1)")

    @property
    def fusion_in(self) -> int:
        return N_ROLES + self.n_intents + self.hidden

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Batch:
    """Right-padded stack of packed inputs."""

    token_ids: np.ndarray   # (B, T)
    key_mask: np.ndarray    # (B, T) bool
    sep_positions: np.ndarray  # (B, U), padded with 0
    utt_mask: np.ndarray    # (B, U) bool
    roles: np.ndarray       # (B, U)
    intents: np.ndarray     # (B, U)

    @property
    def size(self) -> int:
        return int(self.token_ids.shape[0])


def collate(packed: Sequence[PackedInput]) -> Batch:
    if not packed:
        raise EncoderError("empty batch")
    b = len(packed)
    t = max(len(p) for p in packed)
    u = max(p.n_utterances for p in packed)
    ids = np.full((b, t), PAD_ID, dtype=np.int64)
    key_mask = np.zeros((b, t), dtype=bool)
    seps = np.zeros((b, u), dtype=np.int64)
    utt_mask = np.zeros((b, u), dtype=bool)
    roles = np.zeros((b, u), dtype=np.int64)
    intents = np.zeros((b, u), dtype=np.int64)
    for i, p in enumerate(packed):
        n, k = len(p), p.n_utterances
        ids[i, :n] = p.token_ids
        key_mask[i, :n] = True
        seps[i, :k] = p.sep_positions
        utt_mask[i, :k] = True
        roles[i, :k] = p.roles
        intents[i, :k] = p.intents
    return Batch(ids, key_mask, seps, utt_mask, roles, intents)


@dataclass
class EncodedDialog:
    t_cls: Tensor       # (B, H) or (H,)
    t_new: Tensor       # (B, U, H) or (U, H)
    utt_mask: np.ndarray


def init_params(cfg: EncoderConfig, seed, ps: Optional[ParamSet] = None) -> ParamSet:
    """Xavier-uniform weights and zero biases (layer-norm gains start at one)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ps = ps if ps is not None else ParamSet()
    h, f = cfg.hidden, cfg.ffn
    ps.add("enc.tok_emb", xavier_uniform(rng, cfg.vocab_size, h))
    ps.add("enc.pos_emb", xavier_uniform(rng, cfg.m_max, h))
    ps.add("enc.emb_ln.g", np.ones(h))
    ps.add("enc.emb_ln.b", np.zeros(h))
    for l in range(cfg.layers):
        pre = f"enc.layer{l}"
        for name in ("q", "k", "v", "o"):
            add_linear(ps, rng, f"{pre}.{name}", h, h)
        ps.add(f"{pre}.ln1.g", np.ones(h))
        ps.add(f"{pre}.ln1.b", np.zeros(h))
        add_linear(ps, rng, f"{pre}.ff1", h, f)
        add_linear(ps, rng, f"{pre}.ff2", f, h)
        ps.add(f"{pre}.ln2.g", np.ones(h))
        ps.add(f"{pre}.ln2.b", np.zeros(h))
    add_mlp(ps, rng, "enc.fusion", cfg.fusion_in, h, h)
    return ps


def _heads(x, b, t, n_heads, d):
    return ops.transpose(ops.reshape(x, (b, t, n_heads, d)), (0, 2, 1, 3))


def _layer(ps, pre, x, key_mask, cfg, rng, training):
    b, t, h = x.shape
    nh, d = cfg.heads, h // cfg.heads
    q = _heads(linear(ps, f"{pre}.q", x), b, t, nh, d)
    k = _heads(linear(ps, f"{pre}.k", x), b, t, nh, d)
    v = _heads(linear(ps, f"{pre}.v", x), b, t, nh, d)
    att = ops.scaled_dot_attention(q, k, v, key_mask[:, None, :])
    att = ops.reshape(ops.transpose(att, (0, 2, 1, 3)), (b, t, h))
    att = ops.dropout(linear(ps, f"{pre}.o", att), cfg.dropout, rng, training)
    x = ops.layer_norm(ops.add(x, att), ps[f"{pre}.ln1.g"], ps[f"{pre}.ln1.b"])
    ff = ops.tanh(linear(ps, f"{pre}.ff1", x))
    ff = ops.dropout(linear(ps, f"{pre}.ff2", ff), cfg.dropout, rng, training)
    return ops.layer_norm(ops.add(x, ff), ps[f"{pre}.ln2.g"], ps[f"{pre}.ln2.b"])


def _one_hot(ids: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(ids.shape + (n,))
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


def encode_batch(batch: Batch, ps: ParamSet, cfg: EncoderConfig,
                 train_mode: bool = False, rng: Optional[np.random.Generator] = None) -> EncodedDialog:
    b, t = batch.token_ids.shape
    if t > cfg.m_max:
        raise EncoderError(f"sequence of {t} tokens exceeds m_max={cfg.m_max}")
    if batch.intents.size and (batch.intents.min() < 0 or batch.intents.max() >= cfg.n_intents):
        raise EncoderError(f"intent id outside [0, {cfg.n_intents})")
    if batch.roles.size and (batch.roles.min() < 0 or batch.roles.max() >= N_ROLES):
        raise EncoderError("role id outside {0, 1}")
    if batch.token_ids.max() >= cfg.vocab_size:
        raise EncoderError(f"token id outside [0, {cfg.vocab_size})")
    drop = cfg.dropout if train_mode else 0.0
    x = ops.add(ops.embedding_gather(ps["enc.tok_emb"], batch.token_ids),
                ops.embedding_gather(ps["enc.pos_emb"], np.arange(t)))
    x = ops.layer_norm(x, ps["enc.emb_ln.g"], ps["enc.emb_ln.b"])
    x = ops.dropout(x, drop, rng, train_mode)
    for l in range(cfg.layers):
        x = _layer(ps, f"enc.layer{l}", x, batch.key_mask, cfg, rng, train_mode)
    t_cls = ops.reshape(ops.gather_rows(x, np.zeros((b, 1), dtype=np.int64)), (b, cfg.hidden))
    t_sep = ops.gather_rows(x, batch.sep_positions)
    # one-hot role and intent enter only here, after the transformer
    side = np.concatenate([_one_hot(batch.roles, N_ROLES), _one_hot(batch.intents, cfg.n_intents)], axis=-1)
    fused = ops.concat([side, t_sep], axis=-1)
    t_new = mlp(ps, "enc.fusion", fused, drop, rng, train_mode)
    return EncodedDialog(t_cls, t_new, batch.utt_mask)


def encode(packed: PackedInput, ps: ParamSet, cfg: EncoderConfig,
           train_mode: bool = False, rng: Optional[np.random.Generator] = None) -> EncodedDialog:
    """Encode one packed prefix; returns ``t_cls`` (H,) and ``t_new`` (U, H)."""
    if np.any(packed.sep_positions >= cfg.m_max) or len(packed) > cfg.m_max:
        raise EncoderError(f"position index beyond m_max={cfg.m_max}")
    enc = encode_batch(collate([packed]), ps, cfg, train_mode, rng)
    u = packed.n_utterances
    return EncodedDialog(ops.reshape(enc.t_cls, (cfg.hidden,)),
                         ops.reshape(enc.t_new, (u, cfg.hidden)), enc.utt_mask[0])

import dataclasses

import numpy as np
import pytest

from g3m.corpus import GREETING, Role, Utterance, Vocabulary, pack
from g3m.encoder import EncoderConfig, EncoderError, collate, encode, encode_batch, init_params
from g3m.layers import xavier_limit
from g3m.numcore import Tape, backward, grad_check, ops
from g3m.numcore.ops import attention_weights

TOKENS = ["[CLS]", "[SEP]", "[PAD]", "[UNK]", "hi", "there", "help", "me", "please", "now"]
VOCAB = Vocabulary(TOKENS, [GREETING, "Request", "Guidance"], ["A", "B"])


def _cfg(**kw):
    base = dict(vocab_size=len(TOKENS), n_intents=3, hidden=16, layers=2, heads=4, m_max=32, dropout=0.1)
    base.update(kw)
    return EncoderConfig(**base)


def _prefix(intents=("Request", "Guidance", "Request")):
    texts = ["hi there", "help me please", "now"]
    roles = [Role.USER, Role.AGENT, Role.USER]
    return [Utterance(r, t, i) for r, t, i in zip(roles, texts, intents)]


def test_output_shapes():
    cfg = _cfg()
    ps = init_params(cfg, 0)
    enc = encode(pack(_prefix(), VOCAB, cfg.m_max), ps, cfg)
    assert enc.t_cls.shape == (16,)
    assert enc.t_new.shape == (3, 16)


def test_eval_mode_is_deterministic():
    cfg = _cfg()
    ps = init_params(cfg, 0)
    p = pack(_prefix(), VOCAB, cfg.m_max)
    a = encode(p, ps, cfg)
    b = encode(p, ps, cfg)
    assert np.array_equal(a.t_cls.data, b.t_cls.data)
    assert np.array_equal(a.t_new.data, b.t_new.data)


def test_train_mode_dropout_follows_rng():
    cfg = _cfg()
    ps = init_params(cfg, 0)
    p = pack(_prefix(), VOCAB, cfg.m_max)
    a = encode(p, ps, cfg, train_mode=True, rng=np.random.default_rng(5))
    b = encode(p, ps, cfg, train_mode=True, rng=np.random.default_rng(5))
    c = encode(p, ps, cfg, train_mode=False)
    assert np.array_equal(a.t_cls.data, b.t_cls.data)
    assert not np.allclose(a.t_cls.data, c.t_cls.data)


def test_intent_enters_only_through_fusion():
    cfg = _cfg()
    ps = init_params(cfg, 0)
    a = encode(pack(_prefix(), VOCAB, cfg.m_max), ps, cfg)
    b = encode(pack(_prefix(("Request", "Request", "Request")), VOCAB, cfg.m_max), ps, cfg)
    assert np.array_equal(a.t_cls.data, b.t_cls.data)
    assert np.array_equal(a.t_new.data[[0, 2]], b.t_new.data[[0, 2]])
    assert not np.allclose(a.t_new.data[1], b.t_new.data[1])


def test_xavier_bounds_and_seeding():
    cfg = _cfg()
    ps = init_params(cfg, 3)
    w = ps["enc.layer0.q.w"].value
    assert np.abs(w).max() <= xavier_limit(16, 16)
    assert np.array_equal(ps["enc.layer0.q.b"].value, np.zeros(16))
    same = init_params(cfg, 3)
    other = init_params(cfg, 4)
    assert all(np.array_equal(ps[n].value, same[n].value) for n in ps.names())
    assert not np.array_equal(w, other["enc.layer0.q.w"].value)


def test_attention_rows_sum_to_one_with_padding():
    rng = np.random.default_rng(0)
    q, k = rng.normal(size=(2, 5, 4)), rng.normal(size=(2, 5, 4))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    w = attention_weights(q, k, mask)
    assert np.allclose(w.sum(-1), 1.0, atol=1e-12)
    assert np.all(w[0, :, 3:] == 0.0)


def test_padding_does_not_change_encoding():
    cfg = _cfg()
    ps = init_params(cfg, 1)
    short = pack(_prefix()[:1], VOCAB, cfg.m_max)
    long = pack(_prefix(), VOCAB, cfg.m_max)
    alone = encode(short, ps, cfg)
    batched = encode_batch(collate([short, long]), ps, cfg)
    assert np.allclose(batched.t_cls.data[0], alone.t_cls.data, atol=1e-12)
    assert np.allclose(batched.t_new.data[0, :1], alone.t_new.data, atol=1e-12)


def test_config_and_input_validation():
    with pytest.raises(EncoderError, match="divisible"):
        _cfg(hidden=10, heads=4)
    cfg = _cfg(m_max=4)
    ps = init_params(cfg, 0)
    with pytest.raises(EncoderError, match="m_max"):
        encode(pack(_prefix(), VOCAB, 32), ps, cfg)


def test_encoder_gradients_match_finite_differences():
    cfg = _cfg(hidden=8, layers=1, heads=2, m_max=10, dropout=0.0)
    ps = init_params(cfg, 2)
    p = pack(_prefix(), VOCAB, cfg.m_max)
    weights = np.random.default_rng(9).normal(size=(3, 8))

    def loss():
        enc = encode(p, ps, cfg)
        return ops.add(ops.sum(ops.tanh(enc.t_cls)), ops.sum(ops.hadamard(enc.t_new, weights)))

    # the key bias shifts every score in a row equally, so softmax cancels it
    # and its true gradient is exactly zero; relative error there is FD noise
    checked = [q for q in ps.trainable() if not q.name.endswith(".k.b")]
    report = grad_check(loss, checked, eps=1e-6, tol=1e-3)
    assert report.passed, "\n".join(report.lines())
    kb = ps["enc.layer0.k.b"]
    kb.zero_grad()
    with Tape() as tape:
        out = loss()
    backward(tape, out)
    assert np.abs(kb.grad).max() < 1e-12


def test_pad_content_is_ignored():
    cfg = _cfg()
    ps = init_params(cfg, 1)
    b = collate([pack(_prefix()[:1], VOCAB, cfg.m_max), pack(_prefix(), VOCAB, cfg.m_max)])
    noisy_ids = b.token_ids.copy()
    noisy_ids[~b.key_mask] = 7
    noisy = dataclasses.replace(b, token_ids=noisy_ids)
    a, n = encode_batch(b, ps, cfg), encode_batch(noisy, ps, cfg)
    assert np.array_equal(a.t_cls.data, n.t_cls.data)
    assert np.array_equal(a.t_new.data[b.utt_mask], n.t_new.data[b.utt_mask])


def test_two_utterance_default_width():
    cfg = _cfg(hidden=64, heads=4)
    enc = encode(pack(_prefix()[:2], VOCAB, cfg.m_max), init_params(cfg, 0), cfg)
    assert enc.t_cls.shape == (64,) and enc.t_new.shape == (2, 64)

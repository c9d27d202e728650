import math
import struct

import numpy as np
import pytest

from g3m.checkpoint import (
    FORMAT_VERSION,
    ChecksumError,
    VersionError,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from g3m.corpus import Sample, SynthConfig, generate_synthetic, split
from g3m.encoder import collate, encode_batch
from g3m.gates import GroundTruth, Uniform, nps_to_interval
from g3m.model import (
    PROB_FLOOR,
    TrainConfig,
    build_model,
    joint_loss,
    prepare,
    train,
)
from g3m.numcore import Tape, backward, grad_check

SMALL = dict(hidden=8, layers=1, heads=2, m_max=48, epochs=2, batch_size=16, lr=1e-3, g=3)


@pytest.fixture(scope="module")
def data():
    sessions = generate_synthetic(SynthConfig(n_sessions=60, n_categories=3, n_intents=7), seed=0)
    tr, va, te = split(sessions, seed=0)
    return prepare(tr, va, te)


@pytest.fixture
def model(data):
    return build_model(data, TrainConfig(**SMALL))


def _two_utterance_samples(data, n=4):
    out = []
    for s in data.train:
        if len(s.prefix) >= 2 and len(out) < n:
            out.append(Sample(s.prefix[:2], s.category, s.y_nps, s.nps_raw, s.session_id))
    return out


def _softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def test_prediction_shapes_and_simplex(model, data):
    preds = model.predict_batch(data.test[:5])
    for p in preds:
        assert isinstance(p.nps_z, float)
        assert p.cat_probs.shape == (data.vocab.n_categories,)
        assert abs(p.cat_probs.sum() - 1.0) < 1e-9
        assert 0.0 <= p.nps_raw <= 10.0
        assert p.nps_raw == min(max(p.nps_z * data.zscore.sigma + data.zscore.mean, 0.0), 10.0)


def test_eval_mode_uses_own_predicted_interval(model, data):
    s = data.test[0]
    p = model.predict(s)
    forced = model.forward(collate([model.pack(s)]), [GroundTruth(p.nps_raw)])[1].data[0]
    assert np.array_equal(forced, p.cat_probs)
    other = (nps_to_interval(p.nps_raw) + 5) % 10 + 0.5
    shifted = model.forward(collate([model.pack(s)]), [GroundTruth(other)])[1].data[0]
    assert not np.allclose(shifted, p.cat_probs)


def test_no_gates_matches_hand_wired_pipeline(data):
    m = build_model(data, TrainConfig(**{**SMALL, "variant": "no_gates"}))
    ps = {p.name: p.value for p in m.params}
    batch = collate([m.pack(s) for s in data.test[:3]])
    enc = encode_batch(batch, m.params, m.enc_cfg)
    nps, probs = m.forward(batch)
    for b in range(3):
        t_cls = enc.t_cls.data[b]
        t_ic = np.outer(np.ones(m.g), t_cls).reshape(-1)
        y_n = ps["head.nps.w"] @ np.concatenate([t_cls, t_ic]) + ps["head.nps.b"]
        h = np.tanh(t_ic @ ps["nc.mlp.0.w"] + ps["nc.mlp.0.b"])
        t_c = h @ ps["nc.mlp.1.w"] + ps["nc.mlp.1.b"]
        y_c = _softmax(ps["head.cat.w"] @ t_c + ps["head.cat.b"])
        assert abs(nps.data[b] - y_n) < 1e-12
        assert np.max(np.abs(probs.data[b] - y_c)) < 1e-12


def test_no_nc_category_head_ignores_nps_head(data):
    m = build_model(data, TrainConfig(**{**SMALL, "variant": "no_nc"}))
    before = [p.cat_probs for p in m.predict_batch(data.test[:4])]
    m.params["head.nps.b"].value = m.params["head.nps.b"].value + 7.0
    after = [p.cat_probs for p in m.predict_batch(data.test[:4])]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_full_model_depends_on_nps_head(model, data):
    before = [p.cat_probs for p in model.predict_batch(data.test[:8])]
    model.params["head.nps.b"].value = model.params["head.nps.b"].value + 7.0
    after = [p.cat_probs for p in model.predict_batch(data.test[:8])]
    assert not all(np.array_equal(a, b) for a, b in zip(before, after))


def test_loss_perfect_prediction_is_zero(model):
    probs = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    loss = joint_loss(np.array([0.3, -1.0]), probs, np.array([0, 1]), [0.3, -1.0], model.params, 1, 0.9, 0)
    assert loss.item() == 0.0


def test_loss_regulariser_only(model):
    ps = model.params
    probs = np.full((2, 3), 1 / 3)
    loss = joint_loss(np.zeros(2), probs, np.array([0, 2]), [1.0, None], ps, 0.0, 0.0, 0.01)
    expected = 0.005 * (np.sum(ps["head.cat.w"].value ** 2) + np.sum(ps["head.nps.w"].value ** 2))
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_unlabelled_sample_grad_on_nps_head_is_regulariser(model, data):
    cfg = TrainConfig(**SMALL)
    s = next(x for x in data.train if x.y_nps is None)
    wn = model.params["head.nps.w"]

    def fn():
        return model.batch_loss([s], cfg)[0]

    report = grad_check(fn, [wn], eps=1e-6, tol=1e-4)
    assert report.passed
    for p in model.params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    assert np.allclose(wn.grad, cfg.gamma * wn.value, atol=1e-14)


def test_loss_matches_scalar_recomputation(model, data):
    samples = [s for s in data.train if s.y_nps is not None][:6]
    cfg = TrainConfig(**{**SMALL, "gamma": 0.0})
    loss, nps, probs = model.batch_loss(samples, cfg)
    n = len(samples)
    ce = 0.0
    se = 0.0
    for i, s in enumerate(samples):
        ce += math.log(max(probs.data[i][model.vocab.category_id(s.category)], PROB_FLOOR))
        se += (nps.data[i] - s.y_nps) ** 2
    expected = -cfg.alpha / n * ce + cfg.beta / n * se
    assert abs(loss.item() - expected) < 1e-12


def test_loss_permutation_invariant(model, data):
    cfg = TrainConfig(**SMALL)
    samples = data.train[:10]
    a = model.batch_loss(samples, cfg)[0].item()
    perm = np.random.default_rng(0).permutation(10)
    b = model.batch_loss([samples[i] for i in perm], cfg)[0].item()
    assert abs(a - b) < 1e-12


def test_full_model_gradients(data):
    cfg = TrainConfig(**{**SMALL, "dropout": 0.0})
    m = build_model(data, cfg)
    samples = _two_utterance_samples(data)
    assert m.enc_cfg.hidden == 8 and m.g == 3 and m.n_categories == 3

    def fn():
        return m.batch_loss(samples, cfg)[0]

    # the key bias cancels inside softmax; its exact gradient is zero
    checked = [p for p in m.params.trainable() if not p.name.endswith(".k.b")]
    report = grad_check(fn, checked, eps=1e-6, tol=1e-3)
    assert report.passed, "\n".join(report.lines())


def test_training_is_deterministic(data):
    cfg = TrainConfig(**SMALL)
    a = train(data, cfg)
    b = train(data, cfg)
    assert a.history_csv() == b.history_csv()
    assert a.history_csv().startswith("epoch,split,loss,rmse,micro_f1\n")


def test_zero_learning_rate_keeps_weights(data):
    cfg = TrainConfig(**{**SMALL, "lr": 0.0})
    m = build_model(data, cfg)
    before = m.params.state()
    res = train(data, cfg, model=m)
    valid = [r.loss for r in res.history if r.split == "valid"]
    assert max(valid) - min(valid) <= 1e-12
    assert all(np.array_equal(before[k], v) for k, v in res.model.params.state().items())


# ------------------------------------------------------------------ checkpoint


def test_checkpoint_round_trip_is_exact(tmp_path, model, data):
    path = tmp_path / "m.g3m"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    for a, b in zip(model.predict_batch(data.test), loaded.predict_batch(data.test)):
        assert a.nps_z == b.nps_z and np.array_equal(a.cat_probs, b.cat_probs)
    assert np.array_equal(loaded.cooc.D, model.cooc.D)
    assert loaded.zscore == model.zscore
    assert loaded.vocab == model.vocab
    assert loaded.train_config == model.train_config
    assert to_bytes(loaded) == path.read_bytes()


def test_checkpoint_keeps_variant(tmp_path, data):
    m = build_model(data, TrainConfig(**{**SMALL, "variant": "no_ic"}))
    save_checkpoint(m, tmp_path / "m.g3m")
    assert load_checkpoint(tmp_path / "m.g3m").variant == "no_ic"


def test_checkpoint_corruption_detected(model):
    buf = to_bytes(model)
    with pytest.raises(ChecksumError):
        from_bytes(buf[:-100])
    flipped = bytearray(buf)
    flipped[len(buf) // 2] ^= 0x01
    with pytest.raises(ChecksumError):
        from_bytes(bytes(flipped))


def test_checkpoint_version_mismatch(model):
    buf = bytearray(to_bytes(model))
    buf[4:8] = struct.pack("<I", 99)
    with pytest.raises(VersionError, match=f"99.*{FORMAT_VERSION}"):
        from_bytes(bytes(buf))


def test_selector_variants_in_train_mode(model, data):
    s = next(x for x in data.train if x.nps_raw is None)
    p_train = model.predict(s, mode="train")
    uni = model.forward(collate([model.pack(s)]), [Uniform()])[1].data[0]
    assert np.array_equal(p_train.cat_probs, uni)

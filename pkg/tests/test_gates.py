import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g3m.gates import (
    N_INTERVALS,
    CooccurrenceMatrix,
    GateError,
    GroundTruth,
    Predicted,
    Uniform,
    build_cooccurrence,
    category_features,
    ic_gate,
    init_ic_params,
    init_nc_params,
    nc_gate,
    normalise_counts,
    nps_to_interval,
    select_row,
)
from g3m.layers import ParamSet


class _S:
    def __init__(self, nps_raw, category):
        self.nps_raw, self.category = nps_raw, category


def _ic_params(v, w):
    ps = ParamSet()
    ps.add("ic.V", np.asarray(v, dtype=float))
    ps.add("ic.W", np.asarray(w, dtype=float))
    return ps


def test_ic_gate_hand_example():
    # H=2, G=2; W=0 so the pooled rows drop out and g = V tanh(t_cls)
    t_cls = np.array([0.5, -1.0])
    t_new = np.array([[1.0, 2.0], [3.0, -4.0]])
    v = np.array([[1.0, 0.0], [1.0, 1.0]])
    g, t_ic = ic_gate(t_cls, t_new, _ic_params(v, np.zeros((2, 2))))
    th = np.tanh(t_cls)
    expected_g = np.array([th[0], th[0] + th[1]])
    assert np.allclose(g.data, expected_g, atol=1e-12)
    expected = [expected_g[0] * 0.5, expected_g[0] * -1.0, expected_g[1] * 0.5, expected_g[1] * -1.0]
    assert np.allclose(t_ic.data, expected, atol=1e-12)


def test_ic_gate_uses_column_max():
    t_cls = np.zeros(2)
    t_new = np.array([[1.0, -5.0], [0.2, 3.0]])
    g, _ = ic_gate(t_cls, t_new, _ic_params(np.eye(2), np.eye(2)))
    assert np.allclose(g.data, np.tanh([1.0, 3.0]), atol=1e-12)


def test_ic_gate_zero_v_gives_zero():
    rng = np.random.default_rng(0)
    g, t_ic = ic_gate(rng.normal(size=4), rng.normal(size=(3, 4)),
                      _ic_params(np.zeros((3, 4)), rng.normal(size=(4, 4))))
    assert np.all(g.data == 0) and np.all(t_ic.data == 0)
    assert t_ic.shape == (12,)


def test_ic_gate_single_utterance_pool_is_identity():
    rng = np.random.default_rng(1)
    t_cls, row = rng.normal(size=3), rng.normal(size=(1, 3))
    w, v = rng.normal(size=(3, 3)), rng.normal(size=(2, 3))
    g, _ = ic_gate(t_cls, row, _ic_params(v, w))
    assert np.allclose(g.data, v @ np.tanh(t_cls + w @ row[0]), atol=1e-12)


def test_ic_gate_force_ones_and_errors():
    g, t_ic = ic_gate(np.array([1.0, 2.0]), np.ones((2, 2)), _ic_params(np.ones((3, 2)), np.eye(2)),
                      force_ones=True)
    assert np.all(g.data == 1) and t_ic.data.tolist() == [1, 2, 1, 2, 1, 2]
    with pytest.raises(GateError):
        ic_gate(np.ones(2), np.ones((0, 2)), _ic_params(np.ones((1, 2)), np.eye(2)))
    with pytest.raises(GateError):
        init_ic_params(ParamSet(), np.random.default_rng(0), 4, 0)


def test_ic_gate_masked_batch_matches_unbatched():
    rng = np.random.default_rng(2)
    ps = _ic_params(rng.normal(size=(2, 3)), rng.normal(size=(3, 3)))
    t_cls = rng.normal(size=(2, 3))
    t_new = rng.normal(size=(2, 4, 3))
    t_new[0, 2:] = 99.0  # padding rows must be ignored
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1]], dtype=bool)
    g_b, _ = ic_gate(t_cls, t_new, ps, mask)
    g_0, _ = ic_gate(t_cls[0], t_new[0, :2], ps)
    assert np.allclose(g_b.data[0], g_0.data, atol=1e-12)


def test_interval_mapping():
    assert nps_to_interval(4.8) == 4
    assert nps_to_interval(10.0) == 9
    assert nps_to_interval(0.0) == 0
    assert nps_to_interval(-3) == 0 and nps_to_interval(12) == 9
    assert nps_to_interval(np.array([0.5, 9.99])).tolist() == [0, 9]
    with pytest.raises(GateError):
        nps_to_interval(float("nan"))


def test_cooccurrence_min_max_example():
    d = normalise_counts(np.array([[2, 0], [4, 8]]))
    assert np.allclose(d, [[0.25, 0.0], [0.5, 1.0]])


def test_cooccurrence_from_samples():
    samples = [_S(4.8, 0), _S(4.1, 0), _S(9.0, 1), _S(None, 1)]
    cooc = build_cooccurrence(samples, 2)
    assert cooc.counts[4].tolist() == [2, 0]
    assert cooc.counts[9].tolist() == [0, 1]
    assert cooc.counts.sum() == 3
    assert cooc.D.min() == 0.0 and cooc.D.max() == 1.0
    with pytest.raises(GateError):
        build_cooccurrence([_S(None, 0)], 2)


def test_cooccurrence_single_sample():
    cooc = build_cooccurrence([_S(7.5, 1)], 3)
    assert cooc.D[7].tolist() == [0, 1, 0]
    assert cooc.D.sum() == 1.0


def test_constant_counts_warn(caplog):
    with caplog.at_level(logging.WARNING):
        d = normalise_counts(np.ones((N_INTERVALS, 2)))
    assert np.all(d == 0.5)
    assert "equal" in caplog.text


def test_row_selection():
    d = np.arange(20, dtype=float).reshape(10, 2) / 19
    cooc = CooccurrenceMatrix(d * 19, d)
    assert select_row(GroundTruth(4.8), cooc).tolist() == d[4].tolist()
    assert select_row(Predicted(10.0), cooc).tolist() == d[9].tolist()
    assert np.allclose(select_row(Uniform(), cooc), d.mean(axis=0))


def _nc_params(c):
    ps = ParamSet()
    init_nc_params(ps, np.random.default_rng(0), 2, 2, c)
    return ps


def test_nc_gate_hadamard_example():
    ps = _nc_params(3)
    t_ic = np.random.default_rng(1).normal(size=4)
    cooc = CooccurrenceMatrix(np.zeros((10, 3)), np.zeros((10, 3)))
    t_c = nc_gate(t_ic, np.ones(3), cooc, ps).data
    out = nc_gate(t_ic, np.array([0.0, 2.0, 1.0]), cooc, ps).data
    assert np.allclose(out, t_c * [0, 2, 1], atol=1e-15)


def test_nc_gate_all_ones_row_is_identity():
    ps = _nc_params(2)
    t_ic = np.random.default_rng(3).normal(size=4)
    d = np.ones((10, 2))
    cooc = CooccurrenceMatrix(d, d)
    assert np.array_equal(nc_gate(t_ic, GroundTruth(3.0), cooc, ps).data,
                          category_features(t_ic, ps).data)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 50), min_size=3, max_size=3), min_size=10, max_size=10),
       st.permutations(range(3)), st.floats(0.1, 100))
def test_normalisation_invariances(counts, perm, scale):
    counts = np.array(counts, dtype=float)
    if counts.max() == counts.min():
        return
    d = normalise_counts(counts)
    assert d.min() == 0.0 and d.max() == 1.0
    assert np.allclose(normalise_counts(counts[:, perm]), d[:, perm])
    assert np.allclose(normalise_counts(counts * scale), d)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from missiongnn.hgnn import ShapeMismatch
from missiongnn.temporal_head import (
    DecisionParams,
    TemporalParams,
    decide,
    decide_backward,
    decompose,
    encode_window,
    encode_window_backward,
    sinusoidal_positions,
)

from oracles import (
    central_diff,
    decide_ref,
    encode_window_ref,
    layer_norm_ref,
    positions_ref,
    rel_error,
)


def random_params(rng, D=8, ffn=12, heads=2, positional=True):
    p = TemporalParams.init(D, ffn, heads, rng, np.float64, positional)
    for k in p.TRAINABLE:
        arr = getattr(p, k)
        if k.startswith("b") or k.endswith("_b"):
            arr[...] = rng.normal(scale=0.3, size=arr.shape)
        if k.endswith("_g"):
            arr[...] = rng.uniform(0.5, 1.5, arr.shape)
    return p


def test_positions_match_reference():
    np.testing.assert_allclose(sinusoidal_positions(7, 6), positions_ref(7, 6), atol=1e-15)


def test_zero_weights_residual_path():
    D = 8
    p = TemporalParams.init(D, 16, 8, np.random.default_rng(0), np.float64, positional=False)
    for k in ("Wq", "Wk", "Wv", "Wo", "W1", "W2"):
        getattr(p, k)[...] = 0
    row = np.random.default_rng(1).normal(size=D)
    row = (row - row.mean()) / np.sqrt(row.var() + 1e-5)  # already layer-normalized
    out, _ = encode_window(np.tile(row, (5, 1)), p)
    # only the two layer norms act on the residual path
    ones, zeros = [1.0] * D, [0.0] * D
    want = layer_norm_ref(layer_norm_ref(list(row), ones, zeros), ones, zeros)
    np.testing.assert_allclose(out, want, atol=1e-12)
    np.testing.assert_allclose(out, row, atol=1e-4)


def test_permuting_history_without_positions():
    rng = np.random.default_rng(2)
    p = random_params(rng, positional=False)
    w = rng.normal(size=(6, 8))
    perm = np.r_[rng.permutation(5), 5]
    a, _ = encode_window(w, p)
    b, _ = encode_window(w[perm], p)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_positions_break_permutation_invariance():
    rng = np.random.default_rng(3)
    p = random_params(rng)
    w = rng.normal(size=(6, 8))
    a, _ = encode_window(w, p)
    b, _ = encode_window(w[[1, 0, 2, 3, 4, 5]], p)
    assert not np.allclose(a, b)


@pytest.mark.parametrize("positional", [True, False])
def test_encode_window_reference(positional):
    rng = np.random.default_rng(4)
    p = random_params(rng, positional=positional)
    w = rng.normal(size=(5, 8))
    out, _ = encode_window(w, p)
    ref = encode_window_ref(w, p, p.heads, positional)
    assert np.max(np.abs(out - ref)) < 1e-10


def test_batched_equals_single():
    rng = np.random.default_rng(5)
    p = random_params(rng)
    W = rng.normal(size=(3, 4, 8))
    batch, _ = encode_window(W, p)
    for i in range(3):
        one, _ = encode_window(W[i], p)
        np.testing.assert_allclose(batch[i], one, atol=1e-13)


def test_head_divisibility():
    with pytest.raises(ValueError):
        TemporalParams.init(10, 16, 8, np.random.default_rng(0))


def test_width_mismatch():
    p = TemporalParams.init(8, 16, 8, np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        encode_window(np.zeros((3, 7)), p)


# ---------------------------------------------------------------- decision


def test_decide_uniform_on_zero_weights():
    p = DecisionParams(np.zeros((14, 8)), np.zeros(14))
    np.testing.assert_allclose(decide(np.ones(8), p), np.full(14, 1 / 14))


def test_decide_dominant_logit():
    p = DecisionParams(np.zeros((3, 1)), np.array([10.0, -10.0, -10.0]))
    s = decide(np.zeros(1), p)
    assert s[0] > 0.99999 and s.sum() == pytest.approx(1.0, abs=1e-15)


def test_decide_reference():
    rng = np.random.default_rng(6)
    p = DecisionParams(rng.normal(size=(5, 8)), rng.normal(size=5))
    f = rng.normal(size=8) * 20
    assert np.max(np.abs(decide(f, p) - decide_ref(f, p.W, p.b))) < 1e-12


@given(arrays(np.float64, 6, elements=st.floats(-30, 30)), st.floats(-100, 100))
@settings(max_examples=100, deadline=None)
def test_softmax_shift_invariance(logits, c):
    p = DecisionParams(np.zeros((6, 1)), logits)
    q = DecisionParams(np.zeros((6, 1)), logits + c)
    s = decide(np.zeros(1), p)
    np.testing.assert_allclose(s, decide(np.zeros(1), q), atol=1e-6)
    assert abs(s.sum() - 1) < 1e-6 and np.all(s >= 0)


# ------------------------------------------------------------ decomposition


def test_decompose_degenerate():
    d = decompose([1.0, 0.0, 0.0, 0.0])
    assert d.p_normal == 1.0 and d.p_anomaly == 0.0 and d.degenerate
    np.testing.assert_allclose(d.conditional, [1 / 3] * 3)


def test_decompose_arithmetic():
    d = decompose([0.5, 0.25, 0.25])
    assert d.p_anomaly == 0.5 and not d.degenerate
    np.testing.assert_allclose(d.conditional, [0.5, 0.5])


@given(arrays(np.float64, 5, elements=st.floats(0.001, 1.0)))
@settings(max_examples=100, deadline=None)
def test_decompose_identities(raw):
    s = raw / raw.sum()
    d = decompose(s)
    assert abs(d.conditional.sum() - 1) < 1e-6
    assert abs(d.p_anomaly - (1 - d.p_normal)) < 1e-6


# --------------------------------------------------------------- gradients


@pytest.mark.parametrize("seed", range(3))
def test_temporal_gradients_fd(seed):
    rng = np.random.default_rng(200 + seed)
    p = random_params(rng)
    w = rng.normal(size=(2, 4, 8))
    R = rng.normal(size=(2, 8))

    def loss():
        out, _ = encode_window(w, p)
        return float((out * R).sum())

    _, cache = encode_window(w, p)
    grads, d_w = encode_window_backward(R, cache, p)
    for k in p.TRAINABLE:
        num, _ = central_diff(loss, getattr(p, k))
        if k == "bk":
            # a shared shift of every key cancels in the softmax: the gradient is exactly zero
            assert np.abs(grads[k]).max() < 1e-12 and np.abs(num).max() < 1e-8
            continue
        assert rel_error(grads[k], num) < 1e-6, k
    num, _ = central_diff(loss, w)
    assert rel_error(d_w, num) < 1e-6


def test_decision_gradients_fd():
    rng = np.random.default_rng(7)
    p = DecisionParams(rng.normal(size=(4, 6)), rng.normal(size=4))
    f = rng.normal(size=(3, 6))
    R = rng.normal(size=(3, 4))

    def loss():
        return float((decide(f, p) * R).sum())

    s = decide(f, p)
    grads, d_f = decide_backward(R, s, f, p)
    for k in ("W", "b"):
        num, _ = central_diff(loss, getattr(p, k))
        assert rel_error(grads[k], num) < 1e-7
    num, _ = central_diff(loss, f)
    assert rel_error(d_f, num) < 1e-7


def test_dropout_only_in_train_mode():
    rng = np.random.default_rng(8)
    p = random_params(rng)
    p.dropout = 0.5
    w = rng.normal(size=(4, 8))
    a, _ = encode_window(w, p, "eval")
    b, _ = encode_window(w, p, "eval")
    np.testing.assert_array_equal(a, b)
    c, _ = encode_window(w, p, "train", np.random.default_rng(0))
    assert not np.allclose(a, c)

import json

import numpy as np
import pytest

from missiongnn.config import Config
from missiongnn.manifest import VideoEntry
from missiongnn.model import MissionGnnModel
from missiongnn.optim import AdamW
from missiongnn.synthetic import make_synthetic_dataset
from missiongnn.trainer import (
    ANOMALY,
    NORMAL,
    PSEUDO_NORMAL,
    LossWeights,
    MissingClass,
    ThresholdSchedule,
    TrainState,
    TrainVideo,
    class_weights,
    consecutive_pairs,
    decay_threshold,
    localize,
    loss_terms,
    read_loss_log,
    sample_batch,
    train_loop,
    train_step,
)

from oracles import adamw_scalar, central_diff, losses_ref, rel_error


# ---------------------------------------------------------------- threshold


def test_threshold_examples():
    assert decay_threshold(ThresholdSchedule(1.0, 0.99, 0)) == 1.0
    assert decay_threshold(ThresholdSchedule(1.0, 0.99, 1)) == pytest.approx(0.995, abs=1e-15)
    assert decay_threshold(ThresholdSchedule(1.0, 1.0, 10 ** 6)) == 1.0


def test_threshold_alpha_validation():
    for bad in (0.0, -0.1, 1.01):
        with pytest.raises(ValueError):
            ThresholdSchedule(1.0, bad)


def test_localize_examples():
    assert localize([0.3], [3], 0.8)[0] == ANOMALY
    assert localize([0.04], [3], 0.95)[0] == PSEUDO_NORMAL
    assert localize([0.1], [3], 0.95)[0] == ANOMALY
    assert localize([0.9], [0], 0.5)[0] == NORMAL


def test_localize_iteration_zero_has_no_pseudo_normal():
    theta = decay_threshold(ThresholdSchedule(1.0, 0.9999, 0))
    part = localize([0.0, 1e-300, 0.5], [2, 2, 2], theta)
    assert np.all(part == ANOMALY)


def test_localize_random_against_rule():
    rng = np.random.default_rng(0)
    p = rng.random(500)
    y = rng.integers(0, 4, 500)
    theta = 0.7
    part = localize(p, y, theta)
    want = np.where(y == 0, NORMAL, np.where(p <= 1 - theta, PSEUDO_NORMAL, ANOMALY))
    np.testing.assert_array_equal(part, want)


# ------------------------------------------------------------------- losses


def random_case(rng, B=12, K=3):
    raw = rng.random((B, K + 1)) + 0.05
    s = raw / raw.sum(1, keepdims=True)
    labels = rng.integers(0, K + 1, B)
    part = np.where(labels == 0, NORMAL, rng.choice([PSEUDO_NORMAL, ANOMALY], B))
    pairs = np.arange(B).reshape(-1, 2)
    return s, labels, part, pairs


@pytest.mark.parametrize("seed", range(5))
def test_losses_match_reference(seed):
    rng = np.random.default_rng(seed)
    s, y, part, pairs = random_case(rng)
    w = LossWeights(1.0, {1: 0.5, 2: 2.0, 3: 1.3}, 0.01, 0.2, lambda_aplus=0.7 if seed % 2 else None)
    bd, _ = loss_terms(part, s, y, w, pairs)
    ref = losses_ref(part, s, y, w.lambda_n, w.lambda_a, w.lambda_spa, w.lambda_smt, pairs, w.lambda_aplus)
    for k, v in ref.items():
        assert abs(getattr(bd, k) - v) < 1e-10, k


def test_perfect_predictions_zero_loss():
    s = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    y = np.array([0, 0, 1, 2])
    part = np.array([NORMAL, NORMAL, ANOMALY, ANOMALY])
    bd, _ = loss_terms(part, s, y, LossWeights(lambda_spa=0, lambda_smt=0))
    assert bd.L_N == 0 and bd.L_Aminus == 0 and bd.L_total == 0


def test_constant_anomaly_no_smoothing_loss():
    s = np.tile([0.4, 0.3, 0.3], (6, 1))
    bd, _ = loss_terms(np.zeros(6), s, np.zeros(6, int), LossWeights(), np.arange(6).reshape(3, 2))
    assert bd.L_smt == 0


def test_log_clamp_finite():
    s = np.array([[0.0, 1.0], [1.0, 0.0]])
    bd, g = loss_terms([NORMAL, ANOMALY], s, [0, 1], LossWeights())
    assert bd.L_N == pytest.approx(-np.log(1e-12))
    assert np.all(np.isfinite(g))


def test_zero_weights_zero_gradient():
    rng = np.random.default_rng(1)
    s, y, part, pairs = random_case(rng)
    w = LossWeights(0.0, {c: 0.0 for c in range(1, 4)}, 0.0, 0.0, 0.0)
    bd, g = loss_terms(part, s, y, w, pairs)
    assert bd.L_total == 0 and not g.any()


@pytest.mark.parametrize("seed", range(3))
def test_loss_gradient_fd(seed):
    rng = np.random.default_rng(10 + seed)
    s, y, part, pairs = random_case(rng)
    w = LossWeights(1.0, {1: 0.5, 2: 2.0, 3: 1.3}, 0.3, 0.5)

    def f():
        return loss_terms(part, s, y, w, pairs)[0].L_total

    _, g = loss_terms(part, s, y, w, pairs)
    num, _ = central_diff(f, s, h=1e-6)
    assert rel_error(g, num) < 1e-6


def test_disabled_term_excluded_but_reported():
    rng = np.random.default_rng(2)
    s, y, part, pairs = random_case(rng)
    w = LossWeights(lambda_spa=0.5)
    full, _ = loss_terms(part, s, y, w, pairs)
    off, g_off = loss_terms(part, s, y, w, pairs, enabled={"N", "A+", "A-", "smt"})
    assert off.L_spa == full.L_spa
    assert off.L_total == pytest.approx(full.L_total - 0.5 * full.L_spa, abs=1e-12)
    _, g_spa = loss_terms(part, s, y, w, pairs, enabled={"spa"})
    _, g_all = loss_terms(part, s, y, w, pairs)
    np.testing.assert_allclose(g_off + g_spa, g_all, atol=1e-12)


def test_consecutive_pairs_stay_in_video():
    vids = ["a", "a", "b", "b", "a", "c"]
    ts = [3, 4, 5, 6, 5, 0]
    pairs = consecutive_pairs(vids, ts)
    assert sorted(map(tuple, pairs)) == [(0, 1), (1, 4), (2, 3)]
    for i, j in pairs:
        assert vids[i] == vids[j] and ts[j] == ts[i] + 1


# ------------------------------------------------------------ class weights


def test_class_weights_examples():
    assert class_weights({1: 100, 2: 300}) == {1: 1.5, 2: 0.5}
    assert class_weights({1: 10, 2: 10, 3: 10}) == pytest.approx({1: 1.0, 2: 1.0, 3: 1.0}, abs=1e-15)
    assert class_weights({4: 77}) == {4: 1.0}


def test_class_weights_missing():
    with pytest.raises(MissingClass):
        class_weights({1: 10}, classes=[1, 2])


def test_class_weights_from_manifest_train_only():
    entries = [
        VideoEntry("a", "train", 1, 100),
        VideoEntry("b", "train", 2, 300),
        VideoEntry("c", "test", 2, 900),
        VideoEntry("d", "train", 0, 500),
    ]
    w = class_weights(entries, classes=[1, 2])
    assert w[1] / w[2] == pytest.approx(3.0)


# ---------------------------------------------------------------- optimizer


def test_adamw_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    p0 = rng.normal(size=(4, 3))
    grads = rng.normal(size=(5, 4, 3))
    params = {"w": p0.copy()}
    opt = AdamW(params, lr=1e-2, weight_decay=0.3)
    for g in grads:
        opt.step({"w": g})
    for i in range(4):
        for j in range(3):
            want = adamw_scalar(p0[i, j], grads[:, i, j], 1e-2, 0.3)[-1]
            assert abs(params["w"][i, j] - want) < 1e-10


def test_adamw_decoupled_decay_zero_gradient():
    params = {"w": np.array([2.0])}
    opt = AdamW(params, lr=0.1, weight_decay=1.0)
    opt.step({"w": np.array([0.0])})
    assert params["w"][0] == pytest.approx(1.8)


# ------------------------------------------------------------------ training


@pytest.fixture(scope="module")
def tiny():
    cfg = Config(seed=1, d_emb=16, n_concepts=4, lr=1e-3, batch_size=16, T=4, ffn_dim=16, heads=4, steps=3)
    ds = make_synthetic_dataset(n_classes=2, n_train=6, n_test=2, frames=20, seed=1, cfg=cfg)
    videos = [TrainVideo(e.video_id, e.video_label, ds.frames(e.video_id).astype(np.float64))
              for e in ds.manifest.split("train")]
    return cfg, ds, videos


def fresh_state(tiny, **over):
    cfg, ds, _ = tiny
    cfg = cfg.replace(**over)
    model = MissionGnnModel.build(ds.graphs, ds.store, gnn_dim=4, ffn_dim=cfg.ffn_dim, heads=cfg.heads,
                                  T=cfg.T, seed=cfg.seed, dtype=np.float64)
    return TrainState.create(model, cfg)


def params_copy(state):
    return {k: v.copy() for k, v in state.model.parameters().items()}


def test_sampler_normal_fraction(tiny):
    _, _, videos = tiny
    rng = np.random.default_rng(0)
    for _ in range(20):
        b = sample_batch(rng, videos, 32)
        assert (b.labels[::2] == 0).mean() >= 0.25
        assert np.all(b.video[b.pairs[:, 0]] == b.video[b.pairs[:, 1]])
        assert np.all(b.t[b.pairs[:, 1]] == b.t[b.pairs[:, 0]] + 1)


def test_zero_learning_rate_keeps_parameters(tiny):
    state = fresh_state(tiny, lr=0.0)
    before = params_copy(state)
    train_step(state, tiny[2])
    assert state.iter == 1
    for k, v in state.model.parameters().items():
        np.testing.assert_array_equal(v, before[k])


def test_training_is_deterministic(tiny):
    a, b = fresh_state(tiny), fresh_state(tiny)
    la = [train_step(a, tiny[2]).L_total for _ in range(2)]
    lb = [train_step(b, tiny[2]).L_total for _ in range(2)]
    assert la == lb
    for k, v in a.model.parameters().items():
        np.testing.assert_array_equal(v, b.model.parameters()[k])


def test_checkpoint_round_trip(tiny, tmp_path):
    state = fresh_state(tiny)
    train_step(state, tiny[2])
    path = tmp_path / "ck.npz"
    state.save(path)
    back = TrainState.load(path)
    assert back.iter == state.iter == 1
    for k, v in state.model.parameters().items():
        np.testing.assert_array_equal(back.model.parameters()[k], v)
    for k, v in state.model.buffers().items():
        np.testing.assert_array_equal(back.model.buffers()[k], v)
    # resumed training follows the uninterrupted trajectory exactly
    la = train_step(state, tiny[2]).L_total
    lb = train_step(back, tiny[2]).L_total
    assert la == lb


def test_zero_steps_writes_initial_checkpoint(tiny, tmp_path):
    state = fresh_state(tiny)
    before = params_copy(state)
    path = tmp_path / "init.npz"
    train_loop(state, tiny[2], steps=0, checkpoint_path=path)
    back = TrainState.load(path)
    assert back.iter == 0
    for k, v in before.items():
        np.testing.assert_array_equal(back.model.parameters()[k], v)


def test_loop_log_lines(tiny, tmp_path):
    state = fresh_state(tiny)
    log = tmp_path / "loss.jsonl"
    train_loop(state, tiny[2], steps=3, log_path=log)
    recs = read_loss_log(log)
    assert [r["iter"] for r in recs] == [1, 2, 3]
    assert recs[0]["theta"] == 1.0
    for r in recs:
        assert {"L_N", "L_Aplus", "L_Aminus", "L_spa", "L_smt", "L_total"} <= set(r)
        json.dumps(r)


def test_disabled_spa_toggle_in_training(tiny):
    state = fresh_state(tiny, use_loss_spa=False, lambda_spa=1.0)
    bd = train_step(state, tiny[2])
    parts = bd.L_N + bd.L_Aplus + bd.L_Aminus + state.weights.lambda_smt * bd.L_smt
    assert bd.L_total == pytest.approx(parts, abs=1e-12)
    assert bd.L_spa > 0

"""Weakly supervised frame-level training with a decaying localization threshold."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .metrics_eval import evaluate_arrays
from .model import MissionGnnModel, load_archive, save_archive, window_indices
from .optim import AdamW

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12

NORMAL, PSEUDO_NORMAL, ANOMALY = 0, 1, 2


class NonFiniteLoss(FloatingPointError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class MissingClass(ValueError):
    pass


# ------------------------------------------------------------------ threshold


@dataclass
class ThresholdSchedule:
    theta0: float = 1.0
    alpha_d: float = 0.9999
    iter: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha_d <= 1.0:
            raise ValueError("alpha_d must be in (0, 1]")


def decay_threshold(sched: ThresholdSchedule) -> float:
    return sched.theta0 * sched.alpha_d ** sched.iter / 2 + 0.5


def localize(p_anomaly, video_labels, theta: float) -> np.ndarray:
    """Assign each frame to NORMAL, PSEUDO_NORMAL or ANOMALY.

    Frames of normal videos are NORMAL. Frames of anomaly videos with
    ``p_A <= 1 - theta`` are PSEUDO_NORMAL, the rest ANOMALY.
    """
    p_a = np.asarray(p_anomaly, dtype=np.float64)
    y = np.asarray(video_labels)
    bound = 1.0 - theta
    out = np.full(p_a.shape, ANOMALY, dtype=np.int8)
    out[y == 0] = NORMAL
    # softmax outputs are strictly positive, so with bound <= 0 nothing can
    # qualify even if p_A underflowed to zero
    if bound > 0:
        out[(y != 0) & (p_a <= bound)] = PSEUDO_NORMAL
    return out


# ---------------------------------------------------------------------- losses


@dataclass
class LossWeights:
    lambda_n: float = 1.0
    lambda_a: dict[int, float] = field(default_factory=dict)
    lambda_spa: float = 0.001
    lambda_smt: float = 0.001
    lambda_aplus: float | None = None


@dataclass
class LossBreakdown:
    L_N: float
    L_Aplus: float
    L_Aminus: float
    L_spa: float
    L_smt: float
    L_total: float
    n_normal: int
    n_pseudo_normal: int
    n_anomaly: int

    def to_dict(self) -> dict:
        return asdict(self)


ALL_TERMS = frozenset({"N", "A+", "A-", "spa", "smt"})


def consecutive_pairs(video_ids, frame_indices) -> np.ndarray:
    """Index pairs ``(i, j)`` in the batch where j is frame t and i frame t-1 of the same video."""
    lookup = {(v, int(t)): i for i, (v, t) in enumerate(zip(video_ids, frame_indices))}
    pairs = [
        (lookup[(v, int(t) - 1)], j)
        for j, (v, t) in enumerate(zip(video_ids, frame_indices))
        if (v, int(t) - 1) in lookup
    ]
    return np.array(pairs, dtype=np.intp).reshape(-1, 2)


def loss_terms(partition, scores, labels, weights: LossWeights, pairs=None, enabled=ALL_TERMS):
    """Loss values and ``dL/dscores``.

    ``labels`` are video-level labels per batch frame, ``pairs`` the
    consecutive-frame index pairs for smoothing. Every term is reported;
    only ``enabled`` ones enter the total and the gradient.
    """
    s = np.asarray(scores)
    part = np.asarray(partition)
    y = np.asarray(labels)
    p_n = s[:, 0]
    p_a = 1.0 - p_n
    grad = np.zeros_like(s, dtype=np.float64)

    def nll(p, idx, w):
        # mean of -w*log(p) over idx with clamped log; returns value and dL/dp
        if idx.size == 0:
            return 0.0, np.zeros(0)
        pc = np.maximum(p[idx], LOG_FLOOR)
        val = float(-(w * np.log(pc)).sum() / idx.size)
        d = np.where(p[idx] > LOG_FLOOR, -w / (idx.size * pc), 0.0)
        return val, d

    normal = np.flatnonzero(part == NORMAL)
    pseudo = np.flatnonzero(part == PSEUDO_NORMAL)
    anom = np.flatnonzero(part == ANOMALY)
    lam_plus = weights.lambda_n if weights.lambda_aplus is None else weights.lambda_aplus

    L_N, d_n = nll(p_n, normal, weights.lambda_n)
    L_Ap, d_ap = nll(p_n, pseudo, lam_plus)
    w_a = np.array([weights.lambda_a.get(int(c), 1.0) for c in y[anom]])
    p_y = s[anom, y[anom]] if anom.size else np.zeros(0)
    L_Am, d_am = nll(p_y, np.arange(anom.size), w_a)

    in_anom_video = np.flatnonzero(y != 0)
    L_spa = float(p_a[in_anom_video].mean()) if in_anom_video.size else 0.0
    pairs = np.zeros((0, 2), dtype=np.intp) if pairs is None else np.asarray(pairs).reshape(-1, 2)
    if pairs.size:
        diff = p_a[pairs[:, 1]] - p_a[pairs[:, 0]]
        L_smt = float((diff ** 2).mean())
    else:
        diff = np.zeros(0)
        L_smt = 0.0

    total = 0.0
    if "N" in enabled:
        total += L_N
        grad[normal, 0] += d_n
    if "A+" in enabled:
        total += L_Ap
        grad[pseudo, 0] += d_ap
    if "A-" in enabled:
        total += L_Am
        grad[anom, y[anom]] += d_am
    if "spa" in enabled and in_anom_video.size:
        total += weights.lambda_spa * L_spa
        grad[in_anom_video, 0] -= weights.lambda_spa / in_anom_video.size
    if "smt" in enabled and pairs.size:
        total += weights.lambda_smt * L_smt
        d_pa = 2.0 * diff / len(diff) * weights.lambda_smt
        np.add.at(grad[:, 0], pairs[:, 1], -d_pa)
        np.add.at(grad[:, 0], pairs[:, 0], d_pa)
    breakdown = LossBreakdown(L_N, L_Ap, L_Am, L_spa, L_smt, total,
                              int(normal.size), int(pseudo.size), int(anom.size))
    return breakdown, grad


def class_weights(frame_counts, classes=None) -> dict[int, float]:
    """Inverse-frequency weights over per-class frame counts, normalized to mean 1.

    ``frame_counts`` maps class -> frames, or is a manifest (train split is
    counted). ``classes`` lists the classes that must be present.
    """
    if not isinstance(frame_counts, dict):
        counts: dict[int, int] = {}
        for e in frame_counts:
            if e.split == "train":
                counts[e.video_label] = counts.get(e.video_label, 0) + e.frame_count
        frame_counts = counts
    if classes is not None:
        missing = [c for c in classes if frame_counts.get(c, 0) <= 0]
        if missing:
            raise MissingClass(f"no training frames for classes {missing}")
    used = {c: n for c, n in frame_counts.items() if n > 0}
    if not used:
        raise MissingClass("no classes with frames")
    inv = {c: 1.0 / n for c, n in used.items()}
    mean = sum(inv.values()) / len(inv)
    return {c: v / mean for c, v in sorted(inv.items())}


# ---------------------------------------------------------------------- state


@dataclass
class TrainState:
    model: MissionGnnModel
    optimizer: AdamW
    schedule: ThresholdSchedule
    weights: LossWeights
    config: Config
    rng: np.random.Generator
    iter: int = 0

    @classmethod
    def create(cls, model: MissionGnnModel, config: Config, weights: LossWeights | None = None):
        opt = AdamW(model.parameters(), config.lr, config.weight_decay,
                    config.beta1, config.beta2, config.eps)
        weights = weights or LossWeights(lambda_spa=config.lambda_spa, lambda_smt=config.lambda_smt,
                                         lambda_aplus=config.lambda_aplus)
        sched = ThresholdSchedule(config.theta0, config.alpha_d, 0)
        return cls(model, opt, sched, weights, config, np.random.default_rng(config.seed))

    def enabled_terms(self) -> frozenset:
        c = self.config
        flags = {"N": c.use_loss_n, "A+": c.use_loss_aplus, "A-": c.use_loss_aminus,
                 "spa": c.use_loss_spa, "smt": c.use_loss_smt}
        return frozenset(k for k, on in flags.items() if on)

    # checkpoint

    def save(self, path) -> None:
        arrays = dict(self.model.arrays())
        for k in self.optimizer.params:
            arrays[f"optim/m/{k}"] = self.optimizer.m[k]
            arrays[f"optim/v/{k}"] = self.optimizer.v[k]
        meta = self.model.meta()
        meta.update({
            "config": self.config.to_dict(),
            "iter": self.iter,
            "optim_step": self.optimizer.step_count,
            "rng": self.rng.bit_generator.state,
            "weights": {
                "lambda_n": self.weights.lambda_n,
                "lambda_a": {str(k): v for k, v in self.weights.lambda_a.items()},
                "lambda_spa": self.weights.lambda_spa,
                "lambda_smt": self.weights.lambda_smt,
                "lambda_aplus": self.weights.lambda_aplus,
            },
        })
        save_archive(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "TrainState":
        arrays, meta = load_archive(path)
        model = MissionGnnModel.from_arrays(meta, arrays)
        config = Config.from_dict(meta["config"])
        state = cls.create(model, config, LossWeights(
            lambda_n=meta["weights"]["lambda_n"],
            lambda_a={int(k): v for k, v in meta["weights"]["lambda_a"].items()},
            lambda_spa=meta["weights"]["lambda_spa"],
            lambda_smt=meta["weights"]["lambda_smt"],
            lambda_aplus=meta["weights"]["lambda_aplus"],
        ))
        state.optimizer.load_state_dict({
            "step": meta["optim_step"],
            "m": {k: arrays[f"optim/m/{k}"] for k in state.optimizer.params},
            "v": {k: arrays[f"optim/v/{k}"] for k in state.optimizer.params},
        })
        state.iter = meta["iter"]
        state.schedule.iter = state.iter
        state.rng.bit_generator.state = meta["rng"]
        return state


def load_model(path) -> MissionGnnModel:
    arrays, meta = load_archive(path)
    return MissionGnnModel.from_arrays(meta, arrays)


# ---------------------------------------------------------------------- data


@dataclass
class TrainVideo:
    video_id: str
    label: int
    frames: np.ndarray  # (N, d_emb)


@dataclass
class Batch:
    video: np.ndarray  # index into the video list, per sample
    t: np.ndarray  # frame index of the scored (last) window position
    labels: np.ndarray  # video-level labels
    pairs: np.ndarray  # consecutive (t-1, t) index pairs


def sample_batch(rng, videos: list[TrainVideo], batch_size: int, min_normal_fraction=0.25) -> Batch:
    """Draw ``batch_size // 2`` consecutive frame pairs (t-1, t).

    Pairs are uniform over frames, except that at least ``min_normal_fraction``
    of them come from normal videos when any exist.
    """
    n_pairs = max(1, batch_size // 2)
    labels = np.array([v.label for v in videos])
    lengths = np.array([len(v.frames) for v in videos])
    slots = np.maximum(lengths - 1, 0)
    normal_ids = np.flatnonzero((labels == 0) & (slots > 0))
    anomaly_ids = np.flatnonzero((labels != 0) & (slots > 0))
    total = slots.sum()
    frac = slots[normal_ids].sum() / total if total else 0.0
    n_norm = int(rng.binomial(n_pairs, frac)) if len(anomaly_ids) else n_pairs
    if len(normal_ids):
        n_norm = max(n_norm, math.ceil(min_normal_fraction * n_pairs))
    else:
        n_norm = 0
    n_norm = min(n_norm, n_pairs) if len(anomaly_ids) else n_pairs

    def draw(ids, k):
        if k == 0:
            return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
        w = slots[ids] / slots[ids].sum()
        vid = rng.choice(ids, size=k, p=w)
        t = 1 + np.floor(rng.random(k) * slots[vid]).astype(np.intp)
        return vid, t

    v1, t1 = draw(normal_ids, n_norm)
    v2, t2 = draw(anomaly_ids, n_pairs - n_norm)
    vid = np.r_[v1, v2]
    t = np.r_[t1, t2]
    video = np.repeat(vid, 2)
    frame = np.stack([t - 1, t], axis=1).ravel()
    pairs = np.arange(2 * n_pairs).reshape(-1, 2)
    return Batch(video, frame, labels[video], pairs)


def _gather(videos, batch: Batch, T: int):
    """Unique frame embeddings and the per-window indices into them."""
    idx = window_indices(batch.t, T)  # (B, T)
    lengths = np.array([len(v.frames) for v in videos])
    offsets = np.r_[0, np.cumsum(lengths)[:-1]]
    keys = offsets[batch.video][:, None] + idx
    uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
    owner = np.searchsorted(offsets, uniq, side="right") - 1
    frames = np.stack([videos[o].frames[k - offsets[o]] for o, k in zip(owner, uniq)])
    return frames, inverse.reshape(idx.shape)


def train_step(state: TrainState, videos: list[TrainVideo], batch: Batch | None = None):
    """One optimization step. Returns the loss breakdown."""
    cfg = state.config
    model = state.model
    if batch is None:
        batch = sample_batch(state.rng, videos, cfg.batch_size, cfg.min_normal_fraction)
    frames, idx = _gather(videos, batch, model.T)
    frames = frames.astype(model.decision.W.dtype, copy=False)

    f, gcache = model.frame_features(frames, "train")
    s, wcache = model.score_windows(f[idx], "train", state.rng)
    state.schedule.iter = state.iter
    theta = decay_threshold(state.schedule)
    p_a = s[:, 1:].astype(np.float64).sum(axis=1)
    part = localize(p_a, batch.labels, theta)
    breakdown, d_s = loss_terms(part, s, batch.labels, state.weights, batch.pairs,
                                state.enabled_terms())
    if not math.isfinite(breakdown.L_total):
        raise NonFiniteLoss(
            f"non-finite loss at iter {state.iter}",
            {"iter": state.iter, "breakdown": breakdown.to_dict(), "theta": theta,
             "max_abs_score_logit": float(np.nanmax(np.abs(s)))},
        )
    d_s = d_s.astype(s.dtype)
    grads, d_win = model.windows_backward(d_s, s, wcache)
    d_f = np.zeros_like(f)
    np.add.at(d_f, idx.ravel(), d_win.reshape(-1, d_win.shape[-1]))
    grads.update(model.features_backward(d_f, gcache))
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"non-finite gradient for {k} at iter {state.iter}",
                                {"iter": state.iter, "param": k})
    state.optimizer.step(grads)
    state.iter += 1
    return breakdown


def train_loop(state: TrainState, videos: list[TrainVideo], steps: int | None = None,
               log_path=None, eval_fn=None, checkpoint_path=None, on_step=None):
    """Run ``steps`` training steps, appending one JSON line per step to ``log_path``.

    ``eval_fn(state) -> dict`` runs every ``config.eval_every`` steps; a
    checkpoint is written every ``config.checkpoint_every`` steps and at the end.
    """
    cfg = state.config
    steps = cfg.steps if steps is None else steps
    history = []
    fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for _ in range(steps):
            bd = train_step(state, videos)
            rec = {"iter": state.iter, **bd.to_dict(), "theta": decay_threshold(
                ThresholdSchedule(cfg.theta0, cfg.alpha_d, state.iter - 1))}
            if eval_fn and cfg.eval_every and state.iter % cfg.eval_every == 0:
                rec["eval"] = eval_fn(state)
            history.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            if on_step:
                on_step(rec)
            if checkpoint_path and cfg.checkpoint_every and state.iter % cfg.checkpoint_every == 0:
                state.save(checkpoint_path)
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        state.save(checkpoint_path)
    return history


def quick_eval(model: MissionGnnModel, videos, class_names=None) -> dict:
    """VAD/VAR summary over ``(frames, frame_labels)`` pairs."""
    scores, labels = [], []
    for frames, y in videos:
        scores.append(model.score_video(frames))
        labels.append(y)
    rep = evaluate_arrays(np.concatenate(scores), np.concatenate(labels), class_names=class_names)
    return {"vad_auc": rep.vad_auc, "mauc": rep.mauc, "vad_ap": rep.vad_ap, "map": rep.map}


def read_loss_log(path) -> list[dict]:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]

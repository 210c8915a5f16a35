"""Frame-level detection (VAD) and recognition (VAR) metrics."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class DegenerateLabels(ValueError):
    pass


class NoPositives(ValueError):
    pass


def _sweep(scores, labels):
    """Cumulative (TP, FP) at each distinct score, highest score first."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    return tp.astype(np.float64), fp.astype(np.float64)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve by the trapezoid rule over tie-grouped thresholds.

    Tied scores form one ROC segment, which equals counting ties as one half
    in the pairwise (Mann-Whitney) form.
    """
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC-AUC needs both positive and negative labels")
    tp, fp = _sweep(scores, labels)
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve, sum of (R_k - R_{k-1}) * P_k."""
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")
    tp, fp = _sweep(scores, labels)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass
class FrameScoreRecord:
    video_id: str
    frame_index: int
    scores: list[float]
    label: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class EvalReport:
    vad_auc: float | None
    per_class_auc: dict[str, float | None]
    mauc: float | None
    vad_ap: float | None
    per_class_ap: dict[str, float | None]
    map: float | None
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def class_scores(scores, var_score="prob") -> np.ndarray:
    """Per-class recognition scores: raw probability, or probability conditioned on anomaly."""
    scores = np.asarray(scores, dtype=np.float64)
    tail = scores[:, 1:]
    if var_score == "prob":
        return tail
    if var_score == "conditional":
        p_a = tail.sum(axis=1, keepdims=True)
        uniform = np.full_like(tail, 1.0 / tail.shape[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(p_a > 0, tail / np.where(p_a > 0, p_a, 1.0), uniform)
    raise ValueError(f"var_score must be 'prob' or 'conditional', got {var_score!r}")


def evaluate_arrays(scores, labels, protocol=("vad", "var"), var_score="prob",
                    class_names=None) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    n = scores.shape[1] - 1
    names = list(class_names) if class_names is not None else [str(i) for i in range(1, n + 1)]
    counts = {"frames": int(labels.size), "anomalous_frames": int((labels != 0).sum())}
    vad_auc = vad_ap = None
    if "vad" in protocol:
        p_a = scores[:, 1:].sum(axis=1)
        abnormal = labels != 0
        if abnormal.any() and (~abnormal).any():
            vad_auc = roc_auc(p_a, abnormal)
        if abnormal.any():
            vad_ap = average_precision(p_a, abnormal)
    per_auc: dict[str, float | None] = {}
    per_ap: dict[str, float | None] = {}
    mauc = m_ap = None
    if "var" in protocol:
        cs = class_scores(scores, var_score)
        for i in range(1, n + 1):
            pos = labels == i
            counts[f"frames_class_{names[i - 1]}"] = int(pos.sum())
            per_auc[names[i - 1]] = roc_auc(cs[:, i - 1], pos) if pos.any() and (~pos).any() else None
            per_ap[names[i - 1]] = average_precision(cs[:, i - 1], pos) if pos.any() else None
        aucs = [v for v in per_auc.values() if v is not None]
        aps = [v for v in per_ap.values() if v is not None]
        mauc = float(np.mean(aucs)) if aucs else None
        m_ap = float(np.mean(aps)) if aps else None
    return EvalReport(vad_auc, per_auc, mauc, vad_ap, per_ap, m_ap, counts)


def evaluate(records, protocol=("vad", "var"), var_score="prob", class_names=None) -> EvalReport:
    """Metrics over score records; the result does not depend on record order."""
    records = sorted(records, key=lambda r: (r.video_id, r.frame_index))
    if not records:
        raise ValueError("no records to evaluate")
    scores = np.array([r.scores for r in records], dtype=np.float64)
    labels = np.array([r.label for r in records])
    return evaluate_arrays(scores, labels, protocol, var_score, class_names)


def write_scores(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_scores(path) -> list[FrameScoreRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(FrameScoreRecord(**json.loads(line)))
    return out


def score_records(model, videos, T=None) -> list[FrameScoreRecord]:
    """Score every frame of ``videos`` (iterable of ``(video_id, frames, frame_labels)``)."""
    out = []
    for vid, frames, labels in videos:
        s = model.score_video(frames, T)
        out.extend(
            FrameScoreRecord(vid, t, s[t].tolist(), int(labels[t])) for t in range(len(frames))
        )
    return out


def context_sweep(model, videos, T_values=(10, 20, 30), class_names=None) -> list[dict]:
    """Re-score with shorter trailing windows; AUC and wall-clock per frame for each size."""
    videos = list(videos)
    rows = []
    for T in T_values:
        start = time.perf_counter()
        recs = score_records(model, videos, T)
        elapsed = time.perf_counter() - start
        report = evaluate(recs, class_names=class_names)
        scores = np.array([r.scores for r in recs])
        rows.append({
            "T": int(T),
            "auc": report.vad_auc,
            "mauc": report.mauc,
            "runtime_per_frame_s": elapsed / max(len(recs), 1),
            "finite": bool(np.all(np.isfinite(scores))),
        })
    return rows

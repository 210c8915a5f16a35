"""Frame-by-frame scoring over a ring buffer of the last T reasoning vectors."""

from __future__ import annotations

import json
import logging
import time
from collections import deque

import numpy as np

from .model import MissionGnnModel

log = logging.getLogger(__name__)


class StreamScorer:
    """Scores each ingested frame from the window ending at it.

    Until T frames have arrived the window is padded by repeating the first
    frame, which matches batch scoring of a whole video.
    """

    def __init__(self, model: MissionGnnModel, T: int | None = None, dtype=np.float64):
        self.model = model
        self.T = T or model.T
        self.dtype = dtype
        self.buffer: deque = deque(maxlen=self.T)
        self.first = None
        self.frame_index = 0
        self.latencies: list[float] = []

    def reset(self) -> None:
        self.buffer.clear()
        self.first = None
        self.frame_index = 0
        self.latencies.clear()

    def push(self, vector) -> np.ndarray:
        start = time.perf_counter()
        x = np.asarray(vector, dtype=self.dtype)[None]
        f, _ = self.model.frame_features(x, "eval")
        f = f[0]
        if self.first is None:
            self.first = f
        self.buffer.append(f)
        pad = [self.first] * (self.T - len(self.buffer))
        window = np.stack(pad + list(self.buffer))[None]
        s, _ = self.model.score_windows(window, "eval")
        self.frame_index += 1
        self.latencies.append(time.perf_counter() - start)
        return s[0]


def parse_feed_line(line: str, d_emb: int):
    """``(frame_index, vector)`` from one JSON line, or None when malformed."""
    try:
        obj = json.loads(line)
        idx = int(obj["frame_index"])
        vec = np.asarray(obj["vector"], dtype=np.float64)
    except (ValueError, KeyError, TypeError):
        return None
    if vec.shape != (d_emb,) or not np.all(np.isfinite(vec)):
        return None
    return idx, vec


def run_stream(model: MissionGnnModel, lines, out, T=None) -> dict:
    """Read a JSON-lines feed and write one score line per valid frame.

    Returns counts and latency stats. Malformed lines are skipped.
    """
    scorer = StreamScorer(model, T)
    skipped = 0
    emitted = 0
    for line in lines:
        if not line.strip():
            continue
        parsed = parse_feed_line(line, model.d_emb)
        if parsed is None:
            skipped += 1
            log.warning("skipping malformed feed line %d", emitted + skipped)
            continue
        idx, vec = parsed
        s = scorer.push(vec)
        out.write(json.dumps({"frame_index": idx, "scores": s.tolist(),
                              "p_anomaly": float(s[1:].sum())}) + "\n")
        emitted += 1
    lat = np.array(scorer.latencies) if scorer.latencies else np.zeros(1)
    stats = {
        "frames": emitted,
        "skipped": skipped,
        "latency_mean_s": float(lat.mean()),
        "latency_max_s": float(lat.max()),
    }
    log.info("stream done: %s", stats)
    return stats

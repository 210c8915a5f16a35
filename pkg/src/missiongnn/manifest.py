"""Dataset manifests: one JSON object per video, video-level labels only."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class VideoEntry:
    video_id: str
    split: str  # train | test
    video_label: int  # 0 normal, i anomaly class
    frame_count: int
    fps: float = 30.0
    source: str = "synthetic"
    # frame-level anomaly intervals [start, end); used only for evaluation
    intervals: list[list[int]] = field(default_factory=list)

    def frame_labels(self) -> np.ndarray:
        y = np.zeros(self.frame_count, dtype=np.int64)
        if self.video_label:
            for s, e in self.intervals:
                y[s:e] = self.video_label
        return y


class DatasetManifest:
    def __init__(self, entries, n_classes: int | None = None, T: int | None = None):
        self.entries: list[VideoEntry] = list(entries)
        self.validate(n_classes, T)

    def validate(self, n_classes=None, T=None) -> None:
        seen = set()
        for e in self.entries:
            if e.video_id in seen:
                raise ValueError(f"duplicate video_id {e.video_id!r}")
            seen.add(e.video_id)
            if e.split not in ("train", "test"):
                raise ValueError(f"{e.video_id}: split must be train or test")
            if e.video_label < 0 or (n_classes is not None and e.video_label > n_classes):
                raise ValueError(f"{e.video_id}: label {e.video_label} out of range")
            if e.frame_count < 1:
                raise ValueError(f"{e.video_id}: frame_count must be positive")
            if T is not None and e.frame_count < T:
                log.warning("%s has %d frames, fewer than the window T=%d", e.video_id, e.frame_count, T)

    def split(self, name: str) -> list[VideoEntry]:
        return [e for e in self.entries if e.split == name]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def dumps(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.entries)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path, n_classes=None, T=None) -> "DatasetManifest":
        entries = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                entries.append(VideoEntry(**json.loads(line)))
        return cls(entries, n_classes, T)

"""Joint-space embeddings for graph labels and video frames.

Backends:

* ``SyntheticBackend`` - seeded-hash Gaussian vectors for labels; frames are
  unit-norm noise, plus ``beta`` times a class signal inside the anomaly
  interval. Fully determined by its inputs, so two processes agree bit for bit.
* ``CacheBackend`` - rows read from a binary cache file (see
  :func:`cache_write`).
* ``HttpEmbeddingBackend`` - remote encoder service.

The encoding node always gets the zero vector.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MGNNEMB1"
ENCODING_SENTINEL = "<encoding>"


class BackendFailure(RuntimeError):
    pass


class MissingFrame(KeyError):
    pass


class CorruptCache(ValueError):
    pass


def seeded_rng(*parts) -> np.random.Generator:
    """RNG keyed by a SHA-256 digest of ``parts``; stable across processes and platforms."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def unit_gaussian(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def frame_key(video_id: str, frame_index: int) -> str:
    return f"{video_id}/{frame_index}"


# ---------------------------------------------------------------------- cache IO


def cache_write(path, entries: dict[str, np.ndarray]) -> None:
    """Write ``key -> vector`` rows as little-endian float32 with a fixed header."""
    rows = list(entries.items())
    dims = {np.asarray(v).reshape(-1).shape[0] for _, v in rows}
    if len(dims) > 1:
        raise ValueError(f"mixed embedding dimensions: {sorted(dims)}")
    d_emb = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", d_emb, len(rows)))
        for key, vec in rows:
            kb = key.encode("utf-8")
            if len(kb) > 0xFFFF:
                raise ValueError(f"key too long: {key[:40]}...")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(np.asarray(vec, dtype="<f4").reshape(-1).tobytes())


def cache_read(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise CorruptCache(f"{path}: bad magic")
    d_emb, count = struct.unpack_from("<II", data, 8)
    pos = 16
    row_bytes = 4 * d_emb
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if pos + 2 > len(data):
            raise CorruptCache(f"{path}: truncated entry header")
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + klen + row_bytes > len(data):
            raise CorruptCache(f"{path}: truncated entry")
        key = data[pos:pos + klen].decode("utf-8")
        pos += klen
        if key in out:
            raise CorruptCache(f"{path}: duplicate key {key!r}")
        out[key] = np.frombuffer(data, dtype="<f4", count=d_emb, offset=pos).astype(np.float32)
        pos += row_bytes
    if pos != len(data):
        raise CorruptCache(f"{path}: {len(data) - pos} trailing bytes")
    return out


# ---------------------------------------------------------------------- backends


@dataclass(frozen=True)
class SyntheticVideo:
    video_id: str
    label: int  # 0 normal, i >= 1 anomaly class
    frame_count: int
    event: tuple[int, int] | None = None  # [start, end) of the anomaly interval

    def frame_label(self, t: int) -> int:
        if self.label and self.event and self.event[0] <= t < self.event[1]:
            return self.label
        return 0


def event_interval(seed: int, video_id: str, frame_count: int, fraction: float = 0.2):
    """Contiguous seeded interval covering ``fraction`` of the video."""
    length = max(1, int(round(fraction * frame_count)))
    start = int(seeded_rng(seed, "event", video_id).integers(0, frame_count - length + 1))
    return start, start + length


class SyntheticBackend:
    def __init__(self, dim=64, seed=0, beta=1.5, class_signals=None, videos=None):
        self.dim = dim
        self.seed = seed
        self.beta = beta
        self.class_signals = dict(class_signals or {})
        self.videos = {v.video_id: v for v in (videos or ())}

    def text(self, label: str) -> np.ndarray:
        return unit_gaussian(seeded_rng(self.seed, "text", label), self.dim)

    def frame(self, video_id: str, frame_index: int) -> np.ndarray:
        video = self.videos.get(video_id)
        if video is None or not 0 <= frame_index < video.frame_count:
            raise MissingFrame(frame_key(video_id, frame_index))
        v = unit_gaussian(seeded_rng(self.seed, "frame", video_id, frame_index), self.dim)
        cls = video.frame_label(frame_index)
        if cls:
            v = v + self.beta * self.class_signals[cls]
        return v


class CacheBackend:
    def __init__(self, path=None, entries=None):
        self.entries = cache_read(path) if path is not None else dict(entries or {})
        first = next(iter(self.entries.values()), None)
        self.dim = 0 if first is None else first.shape[0]

    def text(self, label):
        try:
            return self.entries[label]
        except KeyError as exc:
            raise BackendFailure(f"label {label!r} not in cache") from exc

    def frame(self, video_id, frame_index):
        try:
            return self.entries[frame_key(video_id, frame_index)]
        except KeyError as exc:
            raise MissingFrame(frame_key(video_id, frame_index)) from exc


class HttpEmbeddingBackend:
    """Client for an encoder service: POST ``{kind, payload}`` -> ``{vector}``."""

    def __init__(self, url, dim, timeout=30.0, frame_payload=None):
        self.url = url
        self.dim = dim
        self.timeout = timeout
        self.frame_payload = frame_payload or (lambda vid, t: {"video_id": vid, "frame_index": t})

    def _post(self, kind, payload):
        import requests

        try:
            resp = requests.post(self.url, json={"kind": kind, "payload": payload}, timeout=self.timeout)
            resp.raise_for_status()
            vec = np.asarray(resp.json()["vector"], dtype=np.float64)
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise BackendFailure(f"embedding service: {exc}") from exc
        if vec.shape != (self.dim,):
            raise BackendFailure(f"embedding service returned shape {vec.shape}, expected ({self.dim},)")
        return vec

    def text(self, label):
        return self._post("text", label)

    def frame(self, video_id, frame_index):
        return self._post("image", self.frame_payload(video_id, frame_index))


class EmbeddingStore:
    """Front end over one backend with an in-memory memo."""

    def __init__(self, backend, dtype=np.float32):
        self.backend = backend
        self.dim = backend.dim
        self.dtype = dtype
        self._text: dict[str, np.ndarray] = {}

    def embed_text(self, label: str) -> np.ndarray:
        if label == ENCODING_SENTINEL:
            return np.zeros(self.dim, dtype=self.dtype)
        if not label:
            raise ValueError("label must be non-empty")
        if label not in self._text:
            v = np.asarray(self.backend.text(label), dtype=self.dtype)
            if not np.all(np.isfinite(v)):
                raise BackendFailure(f"non-finite embedding for {label!r}")
            self._text[label] = v
        return self._text[label]

    def embed_frame(self, video_id: str, frame_index: int) -> np.ndarray:
        return np.asarray(self.backend.frame(video_id, frame_index), dtype=self.dtype)

    def embed_video(self, video_id: str, frame_count: int) -> np.ndarray:
        return np.stack([self.embed_frame(video_id, t) for t in range(frame_count)])

    def node_table(self, graph) -> np.ndarray:
        """Per-node embedding rows in graph node order; sensor and encoding rows are zero."""
        from .kg.graph import KEY_CONCEPT, SUB_GRAPH

        rows = []
        for n in graph.nodes:
            if n.kind in (KEY_CONCEPT, SUB_GRAPH):
                rows.append(self.embed_text(n.label))
            else:
                rows.append(self.embed_text(ENCODING_SENTINEL))
        return np.stack(rows)

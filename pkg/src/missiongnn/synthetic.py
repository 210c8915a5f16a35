"""Synthetic end-to-end dataset whose anomaly signal lives in the graphs' concept space.

Each anomaly class gets a generated graph; the class signal is the mean of the
text embeddings of its key concepts. Anomaly frames inside a seeded interval
covering 20% of the video carry ``beta`` times that signal on top of
unit-norm Gaussian noise; every other frame is noise only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .embedding_store import EmbeddingStore, SyntheticBackend, SyntheticVideo, event_interval
from .kg import FileConceptNet, MissionSpec, SyntheticLlm, generate_graph
from .kg.graph import KEY_CONCEPT, ReasoningGraph
from .manifest import DatasetManifest, VideoEntry

UCF_CRIME_CLASSES = (
    "Abuse", "Arrest", "Arson", "Assault", "Burglary", "Explosion", "Fighting",
    "RoadAccidents", "Robbery", "Shooting", "Shoplifting", "Stealing", "Vandalism",
)


def synthetic_graphs(class_names, cfg: Config, seed=0, llm=None, cn=None) -> list[ReasoningGraph]:
    llm = llm or SyntheticLlm(seed)
    cn = cn or FileConceptNet()
    graphs = []
    for name in class_names:
        mission = MissionSpec(
            mission_id=name.lower(), mission_text=name, n_concepts=cfg.n_concepts,
            sub_depth=cfg.d_sub, max_parents=cfg.max_parents,
            max_repair_attempts=cfg.max_repair_attempts,
        )
        graphs.append(generate_graph(mission, llm, cn, cfg.edges_require_conceptnet))
    return graphs


def class_signals(graphs, text_backend) -> dict[int, np.ndarray]:
    out = {}
    for i, g in enumerate(graphs, start=1):
        vecs = [text_backend.text(n.label) for n in g.nodes if n.kind == KEY_CONCEPT]
        out[i] = np.mean(vecs, axis=0)
    return out


def synthetic_manifest(n_classes, n_train, n_test, frames, seed=0, normal_fraction=0.5,
                       event_fraction=0.2) -> DatasetManifest:
    """Balanced manifest: ``normal_fraction`` of each split is normal, the rest cycles through classes."""
    entries = []
    for split, count in (("train", n_train), ("test", n_test)):
        n_normal = int(round(normal_fraction * count))
        for k in range(count):
            label = 0 if k < n_normal else 1 + (k - n_normal) % n_classes
            vid = f"{split}_{k:04d}"
            intervals = []
            if label:
                intervals = [list(event_interval(seed, vid, frames, event_fraction))]
            entries.append(VideoEntry(vid, split, label, frames, 30.0, "synthetic", intervals))
    return DatasetManifest(entries, n_classes)


def videos_from_manifest(manifest: DatasetManifest) -> list[SyntheticVideo]:
    out = []
    for e in manifest:
        event = tuple(e.intervals[0]) if e.intervals else None
        out.append(SyntheticVideo(e.video_id, e.video_label, e.frame_count, event))
    return out


@dataclass
class SyntheticDataset:
    graphs: list[ReasoningGraph]
    manifest: DatasetManifest
    store: EmbeddingStore

    def frames(self, video_id: str) -> np.ndarray:
        entry = next(e for e in self.manifest if e.video_id == video_id)
        return self.store.embed_video(video_id, entry.frame_count)


def make_synthetic_dataset(n_classes=6, n_train=60, n_test=20, frames=300, seed=42, beta=1.5,
                           cfg: Config | None = None, dim=None, graphs=None) -> SyntheticDataset:
    cfg = cfg or Config(d_emb=64)
    dim = dim or cfg.d_emb
    graphs = graphs or synthetic_graphs(UCF_CRIME_CLASSES[:n_classes], cfg, seed)
    manifest = synthetic_manifest(n_classes, n_train, n_test, frames, seed)
    backend = SyntheticBackend(dim=dim, seed=seed, beta=beta)
    backend.class_signals = class_signals(graphs, backend)
    backend.videos = {v.video_id: v for v in videos_from_manifest(manifest)}
    return SyntheticDataset(graphs, manifest, EmbeddingStore(backend))

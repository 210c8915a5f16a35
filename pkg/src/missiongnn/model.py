"""Full detector: per-mission GNNs -> fused reasoning vector -> temporal head -> decision.

Parameters live in flat ``name -> array`` dicts (shared with the owning
dataclasses, so in-place optimizer updates are visible everywhere). Names
follow ``<mission_id>/layer_<l>/<W|b|gamma|beta|run_mean|run_var>``,
``temporal/<name>`` and ``decision/<W|b>``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hgnn
from .hgnn import GnnLayerParams, LayeredGraph, ShapeMismatch
from .kg.graph import ReasoningGraph
from .temporal_head import (
    DecisionParams,
    TemporalParams,
    decide,
    decide_backward,
    encode_window,
    encode_window_backward,
)


@dataclass
class MissionBranch:
    mission_id: str
    graph: ReasoningGraph
    layered: LayeredGraph
    node_table: np.ndarray  # rows in layered.node_ids order
    layers: list[GnnLayerParams]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]


def window_indices(t, T: int) -> np.ndarray:
    """Frame indices of the window ending at ``t``; positions before 0 repeat frame 0."""
    t = np.asarray(t)
    return np.maximum(t[..., None] - T + 1 + np.arange(T), 0)


class MissionGnnModel:
    def __init__(self, branches: list[MissionBranch], temporal: TemporalParams,
                 decision: DecisionParams, T: int = 30):
        self.branches = branches
        self.temporal = temporal
        self.decision = decision
        self.T = T

    # ---------------------------------------------------------------- build

    @classmethod
    def build(cls, graphs, store, *, gnn_dim=8, ffn_dim=128, heads=8, T=30, seed=0,
              dtype=np.float32, positional=True, dropout=0.0):
        """Initialize a model for ``graphs`` (in class order) using label embeddings from ``store``."""
        rng = np.random.default_rng(seed)
        branches = []
        for g in graphs:
            lg = LayeredGraph.from_graph(g)
            by_id = {n.node_id: i for i, n in enumerate(g.nodes)}
            table = store.node_table(g)[[by_id[nid] for nid in lg.node_ids]].astype(dtype)
            layers = hgnn.init_mission_params(store.dim, [gnn_dim] * lg.depth, rng, dtype)
            branches.append(MissionBranch(g.mission.mission_id, g, lg, table, layers))
        D = sum(b.out_dim for b in branches)
        temporal = TemporalParams.init(D, ffn_dim, heads, rng, dtype, positional, dropout)
        decision = DecisionParams.init(D, len(graphs) + 1, rng, dtype)
        return cls(branches, temporal, decision, T)

    @property
    def n_classes(self) -> int:
        return len(self.branches)

    @property
    def d_emb(self) -> int:
        return self.branches[0].node_table.shape[1]

    @property
    def dim(self) -> int:
        return self.temporal.dim

    def mission_ids(self) -> list[str]:
        return [b.mission_id for b in self.branches]

    # ----------------------------------------------------------- parameters

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for b in self.branches:
            for l, p in enumerate(b.layers, start=1):
                for k, v in p.trainable().items():
                    out[f"{b.mission_id}/layer_{l}/{k}"] = v
        for k, v in self.temporal.trainable().items():
            out[f"temporal/{k}"] = v
        for k, v in self.decision.trainable().items():
            out[f"decision/{k}"] = v
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for b in self.branches:
            for l, p in enumerate(b.layers, start=1):
                for k, v in p.buffers().items():
                    out[f"{b.mission_id}/layer_{l}/{k}"] = v
        return out

    def parameter_counts(self) -> dict[str, int]:
        counts = {"gnn": 0, "temporal": 0, "decision": 0}
        for k, v in self.parameters().items():
            group = k.split("/")[0]
            counts[group if group in counts else "gnn"] += v.size
        counts["total"] = sum(counts.values())
        return counts

    # -------------------------------------------------------------- forward

    def frame_features(self, frames, mode="eval"):
        """Fused reasoning vectors ``(U, D)`` for frame embeddings ``(U, d_emb)``."""
        frames = np.asarray(frames)
        if frames.shape[-1] != self.d_emb:
            raise ShapeMismatch(f"frame embeddings have width {frames.shape[-1]}, model expects {self.d_emb}")
        rs, caches = [], []
        for b in self.branches:
            r, c = hgnn.forward_mission(frames, b.node_table, b.layered, b.layers, mode)
            rs.append(r)
            caches.append(c)
        return hgnn.fuse_missions(rs), caches

    def features_backward(self, d_f, caches) -> dict[str, np.ndarray]:
        grads = {}
        start = 0
        for b, c in zip(self.branches, caches):
            d_r = d_f[..., start:start + b.out_dim]
            start += b.out_dim
            layer_grads, _ = hgnn.backward_mission(d_r, c, b.layered, b.layers)
            for l, g in enumerate(layer_grads, start=1):
                for k, v in g.items():
                    grads[f"{b.mission_id}/layer_{l}/{k}"] = v
        return grads

    def score_windows(self, windows, mode="eval", rng=None):
        """Score vectors for windows ``(B, T', D)``; returns ``(s, cache)``."""
        f_prime, tcache = encode_window(windows, self.temporal, mode, rng)
        s = decide(f_prime, self.decision)
        return s, {"temporal": tcache, "f_prime": f_prime}

    def windows_backward(self, d_s, s, cache):
        gd, d_fp = decide_backward(d_s, s, cache["f_prime"], self.decision)
        gt, d_win = encode_window_backward(d_fp, cache["temporal"], self.temporal)
        grads = {f"decision/{k}": v for k, v in gd.items()}
        grads.update({f"temporal/{k}": v for k, v in gt.items()})
        return grads, d_win

    def score_video(self, frames, T: int | None = None, dtype=np.float64) -> np.ndarray:
        """Eval-mode score vectors ``(N, n + 1)`` for every frame of one video."""
        T = T or self.T
        frames = np.asarray(frames, dtype=dtype)
        f, _ = self.frame_features(frames, "eval")
        idx = window_indices(np.arange(len(frames)), T)
        scores = []
        for chunk in np.array_split(np.arange(len(frames)), max(1, len(frames) // 512)):
            s, _ = self.score_windows(f[idx[chunk]], "eval")
            scores.append(s)
        return np.concatenate(scores)

    # ----------------------------------------------------------- checkpoint

    def arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.parameters())
        out.update(self.buffers())
        for b in self.branches:
            out[f"{b.mission_id}/node_table"] = b.node_table
        return out

    def meta(self) -> dict:
        return {
            "T": self.T,
            "heads": self.temporal.heads,
            "positional": self.temporal.positional,
            "dropout": self.temporal.dropout,
            "missions": [b.mission_id for b in self.branches],
            "graphs": [dict(b.graph.to_dict(), trace=[]) for b in self.branches],
        }

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "MissionGnnModel":
        branches = []
        for gd in meta["graphs"]:
            g = ReasoningGraph.from_dict(gd)
            lg = LayeredGraph.from_graph(g)
            mid = g.mission.mission_id
            layers = []
            for l in range(1, lg.depth + 1):
                k = f"{mid}/layer_{l}/"
                layers.append(GnnLayerParams(
                    W=arrays[k + "W"], b=arrays[k + "b"], gamma=arrays[k + "gamma"],
                    beta=arrays[k + "beta"], run_mean=arrays[k + "run_mean"],
                    run_var=arrays[k + "run_var"],
                ))
            branches.append(MissionBranch(mid, g, lg, arrays[f"{mid}/node_table"], layers))
        temporal = TemporalParams(
            **{k: arrays[f"temporal/{k}"] for k in TemporalParams.TRAINABLE},
            heads=meta["heads"], positional=meta["positional"], dropout=meta["dropout"],
        )
        decision = DecisionParams(arrays["decision/W"], arrays["decision/b"])
        return cls(branches, temporal, decision, meta["T"])


def save_archive(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write arrays as little-endian tensors plus a JSON metadata blob to one ``.npz`` archive."""
    payload = {k: np.ascontiguousarray(v, dtype=v.dtype.newbyteorder("<")) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k].copy() for k in z.files if k != "__meta__"}
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
    return arrays, meta

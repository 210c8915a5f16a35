"""Hierarchical multimodal GNN over one mission graph, with exact backward passes.

A mission graph with encoding layer ``L = d_sub + 2`` is run through ``L``
layers. Layer ``l`` does, for every node::

    H   = X W + b                                  (dense, all nodes)
    m   = H[s] * H[d]          for (s, d) in E_l   (element-wise product)
    A_d = mean_{(s,d) in E_l} m     if d in V_l, else H_d
    X'  = ELU(BatchNorm(A))

``E_l`` is the set of edges whose destination sits in layer ``l``; all
encoding fan-in edges belong to the last layer. Arrays carry a leading batch
(frame) axis: ``X`` is ``(B, |V|, D)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kg.graph import ENCODING, SENSOR, ReasoningGraph

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class ShapeMismatch(ValueError):
    pass


class EmptyFanIn(ValueError):
    pass


@dataclass
class LayeredGraph:
    """Index form of a reasoning graph: node order, per-layer edges and aggregation operators."""

    node_ids: list[str]
    layer_of: np.ndarray
    sensor: int
    encoding: int
    depth: int
    src: list[np.ndarray]  # src[l - 1]: source indices of E_l
    dst: list[np.ndarray]
    members: list[np.ndarray]  # bool mask of V_l
    agg: list[np.ndarray] = field(repr=False, default_factory=list)  # (|V|, |E_l|) mean operator
    inc_src: list[np.ndarray] = field(repr=False, default_factory=list)  # (|V|, |E_l|) one-hot
    inc_dst: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @classmethod
    def from_graph(cls, g: ReasoningGraph) -> "LayeredGraph":
        order = sorted(range(len(g.nodes)), key=lambda i: (g.nodes[i].layer_index, i))
        nodes = [g.nodes[i] for i in order]
        index = {n.node_id: k for k, n in enumerate(nodes)}
        layer_of = np.array([n.layer_index for n in nodes])
        depth = g.mission.sub_depth + 2
        sensor = next(index[n.node_id] for n in nodes if n.kind == SENSOR)
        encoding = next(index[n.node_id] for n in nodes if n.kind == ENCODING)
        return cls.from_edges(
            [n.node_id for n in nodes], layer_of, sensor, encoding, depth,
            [(index[e.src], index[e.dst]) for e in g.edges],
        )

    @classmethod
    def from_edges(cls, node_ids, layer_of, sensor, encoding, depth, edges):
        layer_of = np.asarray(layer_of)
        n = len(node_ids)
        if np.count_nonzero(layer_of == 0) != 1 or layer_of[sensor] != 0:
            raise ShapeMismatch("layer 0 must contain exactly the sensor node")
        src, dst, members, agg, inc_src, inc_dst = [], [], [], [], [], []
        for l in range(1, depth + 1):
            el = [(s, d) for s, d in edges if layer_of[d] == l]
            s_idx = np.array([s for s, _ in el], dtype=np.intp)
            d_idx = np.array([d for _, d in el], dtype=np.intp)
            mask = layer_of == l
            counts = np.bincount(d_idx, minlength=n) if len(el) else np.zeros(n, dtype=int)
            starved = np.flatnonzero(mask & (counts == 0))
            if starved.size:
                raise EmptyFanIn(f"layer {l}: nodes {[node_ids[i] for i in starved]} have no incoming edge")
            op = np.zeros((n, len(el)))
            if len(el):
                op[d_idx, np.arange(len(el))] = 1.0 / counts[d_idx]
            cols = np.arange(len(el))
            i_src = np.zeros((n, len(el)))
            i_src[s_idx, cols] = 1.0
            i_dst = np.zeros((n, len(el)))
            i_dst[d_idx, cols] = 1.0
            src.append(s_idx)
            dst.append(d_idx)
            members.append(mask)
            agg.append(op)
            inc_src.append(i_src)
            inc_dst.append(i_dst)
        return cls(list(node_ids), layer_of, sensor, encoding, depth, src, dst, members, agg,
                   inc_src, inc_dst)


@dataclass
class GnnLayerParams:
    W: np.ndarray  # (D_in, D_out)
    b: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    run_mean: np.ndarray
    run_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def init(cls, d_in, d_out, rng, dtype=np.float32):
        bound = np.sqrt(6.0 / (d_in + d_out))
        return cls(
            W=rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype),
            b=np.zeros(d_out, dtype),
            gamma=np.ones(d_out, dtype),
            beta=np.zeros(d_out, dtype),
            run_mean=np.zeros(d_out, dtype),
            run_var=np.ones(d_out, dtype),
        )

    def trainable(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"run_mean": self.run_mean, "run_var": self.run_var}


def init_mission_params(d_emb, dims, rng, dtype=np.float32) -> list[GnnLayerParams]:
    """One layer per entry of ``dims``; layer 1 reads ``d_emb`` inputs."""
    out, d_in = [], d_emb
    for d in dims:
        out.append(GnnLayerParams.init(d_in, d, rng, dtype))
        d_in = d
    return out


# ------------------------------------------------------------------ sub-layers


def dense_transform(X, layer: GnnLayerParams):
    if X.shape[-1] != layer.W.shape[0]:
        raise ShapeMismatch(f"input width {X.shape[-1]} != weight rows {layer.W.shape[0]}")
    return X @ layer.W + layer.b


def message_pass(X, src, dst):
    """Per-edge messages ``X[s] * X[d]``; the node axis is the second to last."""
    return X[..., src, :] * X[..., dst, :]


def aggregate(X, messages, graph: LayeredGraph, l: int):
    """Mean of incoming messages for nodes of layer ``l``, identity elsewhere."""
    keep = ~graph.members[l - 1]
    if graph.agg[l - 1].shape[1] != messages.shape[-2]:
        raise ShapeMismatch("message count does not match the layer's edge list")
    op = graph.agg[l - 1].astype(messages.dtype, copy=False)
    return X * keep[:, None] + op @ messages


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def batch_norm(A, layer: GnnLayerParams, mode: str):
    """Normalize each channel over (frames x nodes). Train mode updates running stats in place."""
    axes = tuple(range(A.ndim - 1))
    if mode == "train":
        mu = A.mean(axis=axes)
        var = A.var(axis=axes)
        n = A.size // A.shape[-1]
        unbiased = var * n / max(n - 1, 1)
        m = layer.momentum
        layer.run_mean[...] = (1 - m) * layer.run_mean + m * mu
        layer.run_var[...] = (1 - m) * layer.run_var + m * unbiased
    elif mode == "eval":
        mu, var = layer.run_mean, layer.run_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    A_hat = (A - mu) * inv_std
    return layer.gamma * A_hat + layer.beta, (A_hat, inv_std)


def gnn_layer(X, layer: GnnLayerParams, graph: LayeredGraph, l: int, mode="eval", _dense=None):
    """One full GNN layer; returns ``(X_l, cache)``."""
    H = dense_transform(X, layer) if _dense is None else _dense
    M = message_pass(H, graph.src[l - 1], graph.dst[l - 1])
    A = aggregate(H, M, graph, l)
    Y, (A_hat, inv_std) = batch_norm(A, layer, mode)
    out = elu(Y)
    cache = {"X": X, "H": H, "Y": Y, "A_hat": A_hat, "inv_std": inv_std, "mode": mode, "l": l}
    return out, cache


def gnn_layer_backward(d_out, cache, layer: GnnLayerParams, graph: LayeredGraph, need_dx=True):
    """Gradients of a :func:`gnn_layer` call. Returns ``(dX, grads)``; ``dH`` is in grads."""
    l = cache["l"]
    Y, A_hat, inv_std, H = cache["Y"], cache["A_hat"], cache["inv_std"], cache["H"]
    dY = d_out * np.where(Y > 0, 1.0, np.exp(np.minimum(Y, 0)))
    axes = tuple(range(Y.ndim - 1))
    grads = {"gamma": (dY * A_hat).sum(axis=axes), "beta": dY.sum(axis=axes)}
    dA_hat = dY * layer.gamma
    if cache["mode"] == "train":
        n = dA_hat.size // dA_hat.shape[-1]
        dA = inv_std / n * (
            n * dA_hat - dA_hat.sum(axis=axes) - A_hat * (dA_hat * A_hat).sum(axis=axes)
        )
    else:
        dA = dA_hat * inv_std

    src, dst = graph.src[l - 1], graph.dst[l - 1]
    keep = ~graph.members[l - 1]
    dt = dA.dtype
    dM = graph.agg[l - 1].T.astype(dt, copy=False) @ dA
    dH = dA * keep[:, None]
    contrib_src = dM * H[..., dst, :]
    contrib_dst = dM * H[..., src, :]
    dH = (dH + graph.inc_src[l - 1].astype(dt, copy=False) @ contrib_src
          + graph.inc_dst[l - 1].astype(dt, copy=False) @ contrib_dst)

    grads["dH"] = dH
    grads["b"] = dH.sum(axis=axes)
    X = cache["X"]
    if X is not None:
        grads["W"] = X.reshape(-1, X.shape[-1]).T @ dH.reshape(-1, dH.shape[-1])
    dX = dH @ layer.W.T if need_dx else None
    return dX, grads


# ----------------------------------------------------------------- full mission


def forward_mission(frames, node_table, graph: LayeredGraph, params, mode="eval"):
    """Run all layers for a batch of frame embeddings ``(B, d_emb)``.

    ``node_table`` holds the frame-independent node inputs ``(|V|, d_emb)``
    (label embeddings, zero rows for sensor and encoding). Returns the
    encoding-node rows ``(B, D_last)`` and a cache for :func:`backward_mission`.
    """
    frames = np.asarray(frames)
    single = frames.ndim == 1
    if single:
        frames = frames[None]
    if frames.shape[-1] != node_table.shape[-1]:
        raise ShapeMismatch(f"frame embedding width {frames.shape[-1]} != {node_table.shape[-1]}")
    if len(params) != graph.depth:
        raise ShapeMismatch(f"{len(params)} layers for a graph of depth {graph.depth}")
    s = graph.sensor
    p0 = params[0]
    # first dense layer: only the sensor row varies with the frame
    dtype = np.result_type(frames, node_table, p0.W)
    base = (node_table @ p0.W + p0.b).astype(dtype, copy=False)
    H0 = np.broadcast_to(base, (frames.shape[0],) + base.shape).copy()
    H0[:, s] = frames @ p0.W + p0.b
    X, cache0 = gnn_layer(None, p0, graph, 1, mode, _dense=H0)
    caches = [cache0]
    for l in range(2, graph.depth + 1):
        X, c = gnn_layer(X, params[l - 1], graph, l, mode)
        caches.append(c)
    r = X[:, graph.encoding]
    cache = {"caches": caches, "frames": frames, "node_table": node_table, "X_last": X}
    return (r[0] if single else r), cache


def backward_mission(d_r, cache, graph: LayeredGraph, params):
    """Gradients of a scalar loss given ``d_r = dL/dr``. Returns ``(grads per layer, d_frames)``."""
    caches = cache["caches"]
    X_last = cache["X_last"]
    d_r = np.asarray(d_r)
    if d_r.ndim == 1:
        d_r = d_r[None]
    d_X = np.zeros_like(X_last, dtype=np.result_type(X_last, d_r))
    d_X[:, graph.encoding] = d_r
    grads: list[dict] = [None] * graph.depth
    for l in range(graph.depth, 0, -1):
        dX_prev, g = gnn_layer_backward(d_X, caches[l - 1], params[l - 1], graph, need_dx=l > 1)
        grads[l - 1] = g
        d_X = dX_prev
    # layer-1 weight gradient from the implicit input (node table + sensor rows)
    g0 = grads[0]
    dH0 = g0["dH"]
    s = graph.sensor
    frames, table = cache["frames"], cache["node_table"]
    g0["W"] = table.T @ dH0.sum(axis=0) - np.outer(table[s], dH0[:, s].sum(axis=0))
    g0["W"] = g0["W"] + frames.T @ dH0[:, s]
    d_frames = dH0[:, s] @ params[0].W.T
    for g in grads:
        g.pop("dH", None)
    return grads, d_frames


def fuse_missions(rs):
    """Concatenate per-mission reasoning vectors along the last axis, in the given order."""
    return np.concatenate(list(rs), axis=-1)

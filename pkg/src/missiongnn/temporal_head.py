"""Short-window temporal model and decision layer.

One post-norm transformer encoder layer reads a window of ``T`` fused
reasoning vectors and only its last position is kept, so attention is
evaluated for that single query. The decision layer is a linear map followed
by a softmax over ``n + 1`` outcomes (index 0 = normal).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hgnn import ShapeMismatch

LN_EPS = 1e-5


@dataclass
class TemporalParams:
    Wq: np.ndarray
    bq: np.ndarray
    Wk: np.ndarray
    bk: np.ndarray
    Wv: np.ndarray
    bv: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    heads: int = 8
    positional: bool = True
    dropout: float = 0.0

    TRAINABLE = ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo", "ln1_g", "ln1_b",
                 "W1", "b1", "W2", "b2", "ln2_g", "ln2_b")

    @property
    def dim(self) -> int:
        return self.Wq.shape[0]

    @classmethod
    def init(cls, dim, ffn_dim, heads, rng, dtype=np.float32, positional=True, dropout=0.0):
        if dim % heads:
            raise ValueError(f"model width {dim} is not divisible by {heads} heads")

        def glorot(a, b):
            bound = np.sqrt(6.0 / (a + b))
            return rng.uniform(-bound, bound, size=(a, b)).astype(dtype)

        z = lambda n: np.zeros(n, dtype)  # noqa: E731
        return cls(
            Wq=glorot(dim, dim), bq=z(dim), Wk=glorot(dim, dim), bk=z(dim),
            Wv=glorot(dim, dim), bv=z(dim), Wo=glorot(dim, dim), bo=z(dim),
            ln1_g=np.ones(dim, dtype), ln1_b=z(dim),
            W1=glorot(dim, ffn_dim), b1=z(ffn_dim), W2=glorot(ffn_dim, dim), b2=z(dim),
            ln2_g=np.ones(dim, dtype), ln2_b=z(dim),
            heads=heads, positional=positional, dropout=dropout,
        )

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.TRAINABLE}


@dataclass
class DecisionParams:
    W: np.ndarray  # (n + 1, D)
    b: np.ndarray

    @classmethod
    def init(cls, dim, n_outputs, rng, dtype=np.float32):
        bound = np.sqrt(6.0 / (dim + n_outputs))
        return cls(rng.uniform(-bound, bound, size=(n_outputs, dim)).astype(dtype),
                   np.zeros(n_outputs, dtype))

    def trainable(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


def sinusoidal_positions(T: int, dim: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(0, dim, 2)
    angle = pos / np.power(10000.0, i / dim)
    pe = np.zeros((T, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return xh * g + b, (xh, inv)


def _layer_norm_backward(dy, cache, g):
    xh, inv = cache
    dxh = dy * g
    D = xh.shape[-1]
    dx = inv / D * (D * dxh - dxh.sum(-1, keepdims=True) - xh * (dxh * xh).sum(-1, keepdims=True))
    return dx, (dy * xh).reshape(-1, D).sum(0), dy.reshape(-1, D).sum(0)


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def encode_window(window, params: TemporalParams, mode="eval", rng=None):
    """Transformer output at the last position of ``window`` (``(T, D)`` or ``(B, T, D)``).

    Returns ``(f_prime, cache)``.
    """
    w = np.asarray(window)
    single = w.ndim == 2
    if single:
        w = w[None]
    B, T, D = w.shape
    if D != params.dim:
        raise ShapeMismatch(f"window width {D} != model width {params.dim}")
    if T < 1:
        raise ShapeMismatch("empty window")
    h = params.heads
    dh = D // h
    Z = w + sinusoidal_positions(T, D).astype(w.dtype) if params.positional else w
    z_last = Z[:, -1]
    q = (z_last @ params.Wq + params.bq).reshape(B, h, dh)
    K = (Z @ params.Wk + params.bk).reshape(B, T, h, dh)
    V = (Z @ params.Wv + params.bv).reshape(B, T, h, dh)
    scale = 1.0 / np.sqrt(dh)
    scores = np.einsum("bhd,bthd->bht", q, K) * scale
    attn = _softmax(scores, -1)
    ctx = np.einsum("bht,bthd->bhd", attn, V).reshape(B, D)
    a_out = ctx @ params.Wo + params.bo

    train_drop = mode == "train" and params.dropout > 0
    keep = 1.0 - params.dropout
    if train_drop:
        rng = rng or np.random.default_rng()
        mask1 = (rng.random(a_out.shape) < keep) / keep
        a_out_d = a_out * mask1
    else:
        mask1 = None
        a_out_d = a_out
    y1, ln1_cache = _layer_norm(z_last + a_out_d, params.ln1_g, params.ln1_b)
    pre = y1 @ params.W1 + params.b1
    hid = np.maximum(pre, 0)
    ff = hid @ params.W2 + params.b2
    if train_drop:
        mask2 = (rng.random(ff.shape) < keep) / keep
        ff_d = ff * mask2
    else:
        mask2 = None
        ff_d = ff
    y2, ln2_cache = _layer_norm(y1 + ff_d, params.ln2_g, params.ln2_b)
    cache = dict(Z=Z, q=q, K=K, V=V, attn=attn, ctx=ctx, y1=y1, pre=pre, hid=hid,
                 ln1=ln1_cache, ln2=ln2_cache, mask1=mask1, mask2=mask2, single=single)
    return (y2[0] if single else y2), cache


def encode_window_backward(d_out, cache, params: TemporalParams):
    """Returns ``(grads, d_window)`` for a scalar loss with ``d_out = dL/df'``."""
    d_out = np.asarray(d_out)
    if d_out.ndim == 1:
        d_out = d_out[None]
    Z, q, K, V, attn = cache["Z"], cache["q"], cache["K"], cache["V"], cache["attn"]
    B, T, D = Z.shape
    h = params.heads
    dh = D // h
    g = {}

    d_s2, g["ln2_g"], g["ln2_b"] = _layer_norm_backward(d_out, cache["ln2"], params.ln2_g)
    d_ff = d_s2 if cache["mask2"] is None else d_s2 * cache["mask2"]
    d_y1 = d_s2.copy()
    g["W2"] = cache["hid"].T @ d_ff
    g["b2"] = d_ff.sum(0)
    d_hid = d_ff @ params.W2.T
    d_pre = d_hid * (cache["pre"] > 0)
    g["W1"] = cache["y1"].T @ d_pre
    g["b1"] = d_pre.sum(0)
    d_y1 += d_pre @ params.W1.T

    d_s1, g["ln1_g"], g["ln1_b"] = _layer_norm_backward(d_y1, cache["ln1"], params.ln1_g)
    d_a = d_s1 if cache["mask1"] is None else d_s1 * cache["mask1"]
    dZ = np.zeros_like(Z, dtype=np.result_type(Z, d_out))
    dZ[:, -1] += d_s1
    g["Wo"] = cache["ctx"].T @ d_a
    g["bo"] = d_a.sum(0)
    d_ctx = (d_a @ params.Wo.T).reshape(B, h, dh)

    d_attn = np.einsum("bhd,bthd->bht", d_ctx, V)
    d_V = np.einsum("bht,bhd->bthd", attn, d_ctx)
    d_scores = attn * (d_attn - (d_attn * attn).sum(-1, keepdims=True))
    scale = 1.0 / np.sqrt(dh)
    d_q = np.einsum("bht,bthd->bhd", d_scores, K) * scale
    d_K = np.einsum("bht,bhd->bthd", d_scores, q) * scale

    d_q = d_q.reshape(B, D)
    d_K = d_K.reshape(B, T, D)
    d_V = d_V.reshape(B, T, D)
    Zf = Z.reshape(-1, D)
    g["Wq"] = Z[:, -1].T @ d_q
    g["bq"] = d_q.sum(0)
    g["Wk"] = Zf.T @ d_K.reshape(-1, D)
    g["bk"] = d_K.sum((0, 1))
    g["Wv"] = Zf.T @ d_V.reshape(-1, D)
    g["bv"] = d_V.sum((0, 1))
    dZ += d_K @ params.Wk.T + d_V @ params.Wv.T
    dZ[:, -1] += d_q @ params.Wq.T
    d_window = dZ[0] if cache["single"] else dZ
    return g, d_window


def decide(f_prime, params: DecisionParams):
    """Softmax over ``W f' + b``."""
    return _softmax(np.asarray(f_prime) @ params.W.T + params.b, -1)


def decide_backward(d_s, s, f_prime, params: DecisionParams):
    """Backprop through the softmax and linear map. Returns ``(grads, d_f_prime)``."""
    d_logits = s * (d_s - (d_s * s).sum(-1, keepdims=True))
    f2 = np.atleast_2d(f_prime)
    dl2 = np.atleast_2d(d_logits)
    grads = {"W": dl2.T @ f2, "b": dl2.sum(0)}
    return grads, d_logits @ params.W


@dataclass(frozen=True)
class Decomposition:
    p_normal: float
    p_anomaly: float
    conditional: np.ndarray
    degenerate: bool


def decompose(s) -> Decomposition:
    """Split a score vector into P(normal), P(anomaly) and P(class | anomaly).

    When P(anomaly) is zero the conditional is undefined; it is returned as
    uniform with ``degenerate=True``.
    """
    s = np.asarray(s, dtype=np.float64)
    p_n = float(s[0])
    tail = s[1:]
    p_a = float(tail.sum())
    if p_a <= 0.0:
        return Decomposition(p_n, 0.0, np.full(tail.shape, 1.0 / max(len(tail), 1)), True)
    return Decomposition(p_n, p_a, tail / p_a, False)

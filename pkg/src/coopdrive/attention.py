"""Deformable attention over a feature grid, with analytic gradients.

Each query predicts, per head, a small set of sample offsets around its
reference point, bilinearly samples the value-projected grid there, and
mixes the samples with softmax weights.  Heads are concatenated and
projected back to the channel width.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor import (
    bilinear_sample_with_grads,
    linear_forward,
    scaled_softmax_rows,
    seeded_init,
    derive_seed,
)

__all__ = ["DeformableAttnParams", "deformable_attention", "deformable_attention_grads",
           "init_deform_params", "multihead_attention"]


@dataclass
class DeformableAttnParams:
    heads: int
    points: int
    w_query: np.ndarray   # (C, C) query projection
    b_query: np.ndarray
    w_offset: np.ndarray  # (C, heads*points*2)
    b_offset: np.ndarray
    w_attn: np.ndarray    # (C, heads*points)
    b_attn: np.ndarray
    w_value: np.ndarray   # (C, C) value projection
    w_out: np.ndarray     # (C, C) content/output projection
    b_out: np.ndarray

    def __post_init__(self):
        c = self.w_query.shape[0]
        if self.heads < 1 or self.points < 1:
            raise ValueError("heads and points must be >= 1")
        if c % self.heads != 0:
            raise ValueError(f"channels {c} not divisible by {self.heads} heads")

    @property
    def channels(self) -> int:
        return self.w_query.shape[0]

    def param_items(self):
        return [("w_query", self.w_query), ("b_query", self.b_query),
                ("w_offset", self.w_offset), ("b_offset", self.b_offset),
                ("w_attn", self.w_attn), ("b_attn", self.b_attn),
                ("w_value", self.w_value), ("w_out", self.w_out),
                ("b_out", self.b_out)]


def init_deform_params(channels: int, heads: int, points: int, seed: int,
                       name: str, scale: float = 0.1,
                       offset_scale: float = 0.5) -> DeformableAttnParams:
    """Seeded init; the offset net starts at zero so untrained attention
    looks exactly at its reference point."""
    def u(field, shape, a):
        return seeded_init(shape, derive_seed(seed, f"{name}.{field}"), "uniform", a)

    c = channels
    return DeformableAttnParams(
        heads=heads, points=points,
        w_query=u("w_query", (c, c), scale) + np.eye(c),
        b_query=np.zeros(c),
        w_offset=np.zeros((c, heads * points * 2)),
        b_offset=u("b_offset", (heads * points * 2,), offset_scale),
        w_attn=u("w_attn", (c, heads * points), scale),
        b_attn=np.zeros(heads * points),
        w_value=u("w_value", (c, c), scale) + np.eye(c),
        w_out=u("w_out", (c, c), scale),
        b_out=np.zeros(c),
    )


def zeroed_output(params: DeformableAttnParams) -> DeformableAttnParams:
    return replace(params, w_out=np.zeros_like(params.w_out),
                   b_out=np.zeros_like(params.b_out))


def _forward(query, value_map, ref_points, p: DeformableAttnParams):
    nq, c = query.shape
    h, w, _ = value_map.shape
    nh, npts = p.heads, p.points
    dh = c // nh

    q = linear_forward(query, p.w_query, p.b_query)
    off = linear_forward(q, p.w_offset, p.b_offset).reshape(nq, nh, npts, 2)
    logits = linear_forward(q, p.w_attn, p.b_attn).reshape(nq * nh, npts)
    attn = scaled_softmax_rows(logits, 1.0).reshape(nq, nh, npts)

    vflat = linear_forward(value_map.reshape(h * w, c), p.w_value, np.zeros(c))
    vmap = vflat.reshape(h, w, nh, dh)

    pts = ref_points[:, None, None, :] + off          # (nq, nh, npts, 2)
    sampled = np.empty((nq, nh, npts, dh))
    samp_caches = []
    for m in range(nh):
        s, d_feat_fn, d_pts_fn = bilinear_sample_with_grads(
            vmap[:, :, m, :], pts[:, m, :, :].reshape(-1, 2))
        sampled[:, m] = s.reshape(nq, npts, dh)
        samp_caches.append((d_feat_fn, d_pts_fn))

    head_out = (attn[..., None] * sampled).sum(axis=2)   # (nq, nh, dh)
    concat = head_out.reshape(nq, c)
    out = linear_forward(concat, p.w_out, p.b_out)
    cache = dict(query=query, value_map=value_map, q=q, attn=attn,
                 sampled=sampled, concat=concat, samp_caches=samp_caches)
    return out, cache


def deformable_attention(query: np.ndarray, value_map: np.ndarray,
                         ref_points: np.ndarray, params: DeformableAttnParams) -> np.ndarray:
    """query (Nq, C), value_map (H, W, C), ref_points (Nq, 2) in grid coords."""
    query = np.asarray(query, dtype=np.float64)
    value_map = np.asarray(value_map, dtype=np.float64)
    ref_points = np.asarray(ref_points, dtype=np.float64)
    if query.ndim != 2 or query.shape[1] != params.channels:
        raise ValueError(f"query shape {query.shape} incompatible with C={params.channels}")
    if ref_points.shape != (query.shape[0], 2):
        raise ValueError("ref_points must be (Nq, 2)")
    if not np.all(np.isfinite(ref_points)):
        raise ValueError("reference points must be finite")
    out, _ = _forward(query, value_map, ref_points, params)
    return out


def deformable_attention_grads(query, value_map, ref_points,
                               params: DeformableAttnParams, d_out):
    """Gradients of sum(d_out * output) w.r.t. query, value map and params.

    Returns (d_query, d_value_map, d_params: dict by field name).
    """
    query = np.asarray(query, dtype=np.float64)
    value_map = np.asarray(value_map, dtype=np.float64)
    ref_points = np.asarray(ref_points, dtype=np.float64)
    d_out = np.asarray(d_out, dtype=np.float64)
    p = params
    nq, c = query.shape
    h, w, _ = value_map.shape
    nh, npts = p.heads, p.points
    dh = c // nh

    _, cache = _forward(query, value_map, ref_points, p)
    q, attn, sampled = cache["q"], cache["attn"], cache["sampled"]
    concat = cache["concat"]

    dp = {}
    # output projection
    dp["w_out"] = concat.T @ d_out
    dp["b_out"] = d_out.sum(axis=0)
    d_concat = d_out @ p.w_out.T
    d_head = d_concat.reshape(nq, nh, dh)

    # through the weighted sample mix
    d_attn = (d_head[:, :, None, :] * sampled).sum(axis=3)       # (nq, nh, npts)
    d_sampled = d_head[:, :, None, :] * attn[..., None]          # (nq, nh, npts, dh)

    # softmax backward (per row over points)
    a2 = attn.reshape(nq * nh, npts)
    g2 = d_attn.reshape(nq * nh, npts)
    d_logits = (a2 * (g2 - (g2 * a2).sum(axis=1, keepdims=True))).reshape(nq, nh * npts)

    # sampling backward, per head
    d_vmap = np.zeros((h, w, nh, dh))
    d_pts = np.empty((nq, nh, npts, 2))
    for m in range(nh):
        d_feat_fn, d_pts_fn = cache["samp_caches"][m]
        g = d_sampled[:, m].reshape(-1, dh)
        d_vmap[:, :, m, :] = d_feat_fn(g)
        d_pts[:, m] = d_pts_fn(g).reshape(nq, npts, 2)

    d_off = d_pts.reshape(nq, nh * npts * 2)

    # value projection
    d_vflat = d_vmap.reshape(h * w, c)
    dp["w_value"] = value_map.reshape(h * w, c).T @ d_vflat
    d_value_map = (d_vflat @ p.w_value.T).reshape(h, w, c)

    # offset and attention nets back to q
    dp["w_offset"] = q.T @ d_off
    dp["b_offset"] = d_off.sum(axis=0)
    dp["w_attn"] = q.T @ d_logits
    dp["b_attn"] = d_logits.sum(axis=0)
    d_q = d_off @ p.w_offset.T + d_logits @ p.w_attn.T

    # query projection
    dp["w_query"] = query.T @ d_q
    dp["b_query"] = d_q.sum(axis=0)
    d_query = d_q @ p.w_query.T
    return d_query, d_value_map, dp


# ---------------------------------------------------------------------------
# plain multi-head attention (used for query self/cross interaction)


@dataclass
class MultiHeadParams:
    heads: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    @property
    def channels(self):
        return self.w_q.shape[0]


def init_mha_params(channels: int, heads: int, seed: int, name: str,
                    scale: float = 0.1) -> MultiHeadParams:
    def u(field):
        return seeded_init((channels, channels), derive_seed(seed, f"{name}.{field}"),
                           "uniform", scale)
    return MultiHeadParams(heads, u("w_q") + np.eye(channels), u("w_k") + np.eye(channels),
                           u("w_v") + np.eye(channels), u("w_o"))


def multihead_attention(queries: np.ndarray, memory: np.ndarray,
                        p: MultiHeadParams) -> np.ndarray:
    """Standard softmax attention of (Nq, C) queries over (Nk, C) memory."""
    nq, c = queries.shape
    nk = memory.shape[0]
    if nk == 0:
        return np.zeros((nq, c))
    dh = c // p.heads
    q = (queries @ p.w_q).reshape(nq, p.heads, dh)
    k = (memory @ p.w_k).reshape(nk, p.heads, dh)
    v = (memory @ p.w_v).reshape(nk, p.heads, dh)
    out = np.empty((nq, p.heads, dh))
    for m in range(p.heads):
        logits = q[:, m] @ k[:, m].T
        w = scaled_softmax_rows(logits, 1.0 / np.sqrt(dh))
        out[:, m] = w @ v[:, m]
    return out.reshape(nq, c) @ p.w_o

"""Anchor-based multi-modal trajectory prediction for tracked agents and
the ego vehicle, driven by composed motion queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import (MultiHeadParams, deformable_attention,
                        init_deform_params, init_mha_params,
                        multihead_attention)
from .bev import BEVFeature
from .geometry import Pose2D, inverse, transform_points
from .tensor import derive_seed, scaled_softmax_rows, seeded_init

__all__ = ["MotionOutput", "MotionWeights", "init_motion_weights",
           "anchor_trajectories", "predict_motion", "EGO_ID", "position_encoding"]

EGO_ID = -1

# constant-turn-rate templates, rad per step; straight first
TURN_RATES = (0.0, 0.25, -0.25, 0.5, -0.5, 0.12)


def anchor_trajectories(k: int, t: int, dt: float, speed: float,
                        heading: float = 0.0, origin=(0.0, 0.0)) -> np.ndarray:
    """(K, T, 2) unicycle rollouts: straight plus left/right arcs."""
    if k < 1 or t < 1:
        raise ValueError("K and T must be >= 1")
    if k > len(TURN_RATES):
        raise ValueError(f"K={k} exceeds the {len(TURN_RATES)} configured anchors")
    out = np.empty((k, t, 2))
    for m in range(k):
        omega = TURN_RATES[m]
        x, y, th = float(origin[0]), float(origin[1]), heading
        for s in range(t):
            x += speed * dt * math.cos(th)
            y += speed * dt * math.sin(th)
            th += omega
            out[m, s] = (x, y)
    return out


@dataclass
class MotionOutput:
    agent_ids: list           # track ids, EGO_ID last
    trajectories: np.ndarray  # (N, K, T, 2), ego frame at prediction time
    scores: np.ndarray        # (N, K), rows sum to 1

    def __post_init__(self):
        if not np.all(np.isfinite(self.trajectories)):
            raise ValueError("trajectories must be finite")


@dataclass
class MotionWeights:
    mode_embed: np.ndarray    # (K_max, C)
    q_a_attn: MultiHeadParams
    q_g_attn: object          # DeformableAttnParams
    ctx_w1: np.ndarray        # (2C, C)
    ctx_b1: np.ndarray
    ctx_w2: np.ndarray        # (C, C)
    ctx_b2: np.ndarray
    pos_enc: list             # 4 x (4F, C) linear maps over sin/cos features
    w_decode: np.ndarray      # (C, T*2), zero so trajectories start at anchors
    w_mode: np.ndarray        # (C, 1), zero so mode scores start uniform
    n_freq: int = 8
    extent: float = 50.0


def init_motion_weights(channels: int, k: int, t: int, seed: int,
                        heads: int = 2, points: int = 4,
                        extent: float = 50.0) -> MotionWeights:
    def u(name, shape, a=0.1):
        return seeded_init(shape, derive_seed(seed, f"motion.{name}"), "uniform", a)

    n_freq = 8
    return MotionWeights(
        mode_embed=u("mode_embed", (len(TURN_RATES), channels), 0.3),
        q_a_attn=init_mha_params(channels, heads, seed, "motion.q_a"),
        q_g_attn=init_deform_params(channels, heads, points, seed, "motion.q_g"),
        ctx_w1=u("ctx_w1", (2 * channels, channels), 0.1 / np.sqrt(channels)),
        ctx_b1=np.zeros(channels),
        ctx_w2=u("ctx_w2", (channels, channels), 0.1 / np.sqrt(channels)),
        ctx_b2=np.zeros(channels),
        pos_enc=[u(f"pos_enc{i}", (4 * n_freq, channels), 0.2) for i in range(4)],
        w_decode=np.zeros((channels, t * 2)),
        w_mode=np.zeros((channels, 1)),
        n_freq=n_freq,
        extent=extent,
    )


def _sincos_features(pts: np.ndarray, n_freq: int, extent: float) -> np.ndarray:
    """(N, 2) positions -> (N, 4*n_freq) sinusoidal features."""
    pts = np.asarray(pts, dtype=np.float64)
    freqs = 2.0 ** np.arange(n_freq) * math.pi / extent
    phases = pts[:, :, None] * freqs[None, None, :]    # (N, 2, F)
    feats = np.concatenate([np.sin(phases), np.cos(phases)], axis=2)
    return feats.reshape(pts.shape[0], 4 * n_freq)


def position_encoding(pts: np.ndarray, w_enc: np.ndarray, n_freq: int,
                      extent: float) -> np.ndarray:
    return _sincos_features(pts, n_freq, extent) @ w_enc


def predict_motion(tracks: list, ego_feature: np.ndarray, ego_pose: Pose2D,
                   ego_speed: float, bev: BEVFeature, weights: MotionWeights,
                   k: int, t: int, dt: float,
                   nominal_speed: float = 5.0) -> MotionOutput:
    """Predict K x T trajectory fans for every track and the ego vehicle.

    Trajectories are expressed in the ego frame at prediction time; mode
    scores are softmax-normalized per agent.
    """
    if k > weights.mode_embed.shape[0]:
        raise ValueError(f"K={k} exceeds the configured anchor count")
    g = bev.grid
    to_ego = inverse(ego_pose)
    c = ego_feature.shape[0]

    feats, positions, headings, speeds, ids = [], [], [], [], []
    for tr in tracks:
        p = transform_points(to_ego, np.array([[tr.box.x, tr.box.y]]))[0]
        feats.append(tr.feature)
        positions.append(p)
        headings.append(tr.box.yaw - ego_pose.yaw)
        speeds.append(float(np.hypot(*tr.velocity)))
        ids.append(tr.id)
    feats.append(ego_feature)
    positions.append(np.zeros(2))
    headings.append(0.0)
    speeds.append(ego_speed)
    ids.append(EGO_ID)

    n = len(ids)
    track_mem = np.stack([tr.feature for tr in tracks]) if tracks else np.zeros((0, c))

    # per-agent anchor fans
    scene_anchors = anchor_trajectories(k, t, dt, nominal_speed)
    agent_anchors = np.empty((n, k, t, 2))
    for i in range(n):
        agent_anchors[i] = anchor_trajectories(
            k, t, dt, speeds[i], headings[i], positions[i])

    queries = (np.stack(feats)[:, None, :] + weights.mode_embed[None, :k, :]) \
        .reshape(n * k, c)

    q_a = multihead_attention(queries, track_mem, weights.q_a_attn)
    endpoints = agent_anchors[:, :, -1, :].reshape(n * k, 2)
    refs = g.local_to_cell(endpoints)
    q_g = deformable_attention(queries, bev.data, refs, weights.q_g_attn)
    hdn = np.maximum(np.concatenate([q_a, q_g], axis=1) @ weights.ctx_w1
                     + weights.ctx_b1, 0.0)
    q_ctx = hdn @ weights.ctx_w2 + weights.ctx_b2

    nf, ext = weights.n_freq, weights.extent
    scene_end = np.tile(scene_anchors[:, -1, :], (n, 1))
    cur = np.repeat(np.stack(positions), k, axis=0)
    enc = (position_encoding(scene_end, weights.pos_enc[0], nf, ext)
           + position_encoding(endpoints, weights.pos_enc[1], nf, ext)
           + position_encoding(cur, weights.pos_enc[2], nf, ext))

    # preliminary decode to obtain the predicted target point, then final
    # decode with its encoding folded into the query position
    prelim = (q_ctx + enc) @ weights.w_decode
    prelim_end = agent_anchors.reshape(n * k, t, 2)[:, -1, :] \
        + prelim.reshape(n * k, t, 2)[:, -1, :]
    q_pos = enc + position_encoding(prelim_end, weights.pos_enc[3], nf, ext)
    q_x = q_ctx + q_pos

    offsets = (q_x @ weights.w_decode).reshape(n, k, t, 2)
    trajs = agent_anchors + offsets
    logits = (q_x @ weights.w_mode).reshape(n, k)
    scores = scaled_softmax_rows(logits, 1.0)
    return MotionOutput(ids, trajs, scores)

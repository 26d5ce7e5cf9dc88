"""Query-based detection over the cooperative BEV map, gated optimal
association, and the per-frame perception step maintaining track and ego
queries."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .accident import Box
from .attention import (MultiHeadParams, deformable_attention, init_deform_params,
                        init_mha_params, multihead_attention)
from .bev import BEVFeature
from .geometry import Pose2D, transform_points, wrap_angle
from .tensor import bilinear_sample, derive_seed, scaled_softmax_rows, seeded_init

__all__ = ["Detection", "TrackQuery", "EgoQuery", "PerceptionState",
           "DetectorWeights", "detect", "associate", "step_perception",
           "init_detector_weights", "oracle_detections"]

GATE_COST = 1.0e6


@dataclass(frozen=True)
class Detection:
    box: Box                  # world frame
    score: float
    feature: np.ndarray       # (C,)
    gt_id: int | None = None


@dataclass
class TrackQuery:
    id: int
    feature: np.ndarray
    box: Box                  # world frame
    age: int = 0
    score: float = 0.0
    coast: int = 0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    gt_id: int | None = None


@dataclass
class EgoQuery:
    feature: np.ndarray
    pose: Pose2D


@dataclass
class PerceptionState:
    tracks: list = field(default_factory=list)
    next_id: int = 0
    ego: EgoQuery | None = None


# ---------------------------------------------------------------------------
# detector


@dataclass
class DetectorLayer:
    cross: object             # DeformableAttnParams
    self_attn: MultiHeadParams
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray


@dataclass
class DetectorWeights:
    det_embed: np.ndarray     # (n_det, C)
    w_ref: np.ndarray         # (C, 2)
    layers: list
    w_center: np.ndarray
    b_center: np.ndarray
    w_size: np.ndarray
    b_size: np.ndarray
    w_yaw: np.ndarray
    w_score: np.ndarray
    b_score: np.ndarray
    assoc_mix: np.ndarray     # (2C, C) matched-track feature refresh
    w_ego: np.ndarray         # (2C, C) ego query refresh
    base_dims: tuple = (4.0, 2.0)


def init_detector_weights(channels: int, n_det: int, n_layers: int, seed: int,
                          heads: int = 2, points: int = 4) -> DetectorWeights:
    def u(name, shape, a=0.1):
        return seeded_init(shape, derive_seed(seed, f"detector.{name}"), "uniform", a)

    layers = []
    for i in range(n_layers):
        layers.append(DetectorLayer(
            cross=init_deform_params(channels, heads, points, seed,
                                     f"detector.layer{i}.cross"),
            self_attn=init_mha_params(channels, heads, seed, f"detector.layer{i}.self"),
            mlp_w1=u(f"layer{i}.w1", (channels, channels), 0.1 / np.sqrt(channels)),
            mlp_b1=np.zeros(channels),
            mlp_w2=u(f"layer{i}.w2", (channels, channels), 0.1 / np.sqrt(channels)),
            mlp_b2=np.zeros(channels),
        ))
    return DetectorWeights(
        det_embed=u("det_embed", (n_det, channels), 0.5),
        w_ref=u("w_ref", (channels, 2), 0.5),
        layers=layers,
        w_center=u("w_center", (channels, 2), 0.2),
        b_center=np.zeros(2),
        w_size=u("w_size", (channels, 2), 0.05),
        b_size=np.zeros(2),
        w_yaw=u("w_yaw", (channels, 2), 0.2),
        w_score=u("w_score", (channels, 1), 0.2),
        # biased low so an untrained detector stays mostly quiet
        b_score=np.full(1, -2.0),
        assoc_mix=u("assoc_mix", (2 * channels, channels), 0.05),
        w_ego=u("w_ego", (2 * channels, channels), 0.05),
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def detect(bev: BEVFeature, weights: DetectorWeights, tau_det: float) -> list:
    """Decode detection queries against the BEV map.

    Returned boxes are in the grid's local (agent) frame; centers are
    squashed into the grid extent by construction.
    """
    g = bev.grid
    x = weights.det_embed.copy()
    refs = _sigmoid(x @ weights.w_ref) * np.array([g.h - 1, g.w - 1])
    for layer in weights.layers:
        x = x + deformable_attention(x, bev.data, refs, layer.cross)
        x = x + multihead_attention(x, x, layer.self_attn)
        hdn = np.maximum(x @ layer.mlp_w1 + layer.mlp_b1, 0.0)
        x = x + (hdn @ layer.mlp_w2 + layer.mlp_b2)
    half_h = (g.h - 1) / 2.0 * g.resolution
    half_w = (g.w - 1) / 2.0 * g.resolution
    centers = (_sigmoid(x @ weights.w_center + weights.b_center) - 0.5) \
        * 2.0 * np.array([half_h, half_w])
    raw_dims = np.clip(x @ weights.w_size + weights.b_size, -2.0, 2.0)
    dims = np.exp(raw_dims) * np.array(weights.base_dims)
    yaw_vec = x @ weights.w_yaw
    yaws = np.arctan2(yaw_vec[:, 1], yaw_vec[:, 0] + 1e-12)
    scores = _sigmoid(x @ weights.w_score + weights.b_score).ravel()
    dets = []
    for k in range(x.shape[0]):
        if scores[k] >= tau_det:
            box = Box(float(centers[k, 0]), float(centers[k, 1]),
                      float(dims[k, 0]), float(dims[k, 1]), float(yaws[k]))
            dets.append(Detection(box, float(scores[k]), x[k].copy()))
    return dets


def detections_to_world(dets: list, ego_pose: Pose2D) -> list:
    out = []
    for d in dets:
        c = transform_points(ego_pose, np.array([[d.box.x, d.box.y]]))[0]
        box = Box(float(c[0]), float(c[1]), d.box.length, d.box.width,
                  wrap_angle(d.box.yaw + ego_pose.yaw))
        out.append(replace(d, box=box))
    return out


def oracle_detections(gt_boxes: dict, bev: BEVFeature, ego_pose: Pose2D) -> list:
    """Ground-truth boxes fed as detections, features sampled off the BEV."""
    g = bev.grid
    dets = []
    for gid in sorted(gt_boxes):
        box = gt_boxes[gid]
        cell = g.world_to_cell(np.array([[box.x, box.y]]))
        feat = bilinear_sample(bev.data, cell)[0]
        dets.append(Detection(box, 1.0, feat, gt_id=gid))
    return dets


# ---------------------------------------------------------------------------
# association


def _refresh_feature(track_f: np.ndarray, det_f: np.ndarray,
                     assoc_mix: np.ndarray) -> np.ndarray:
    c = track_f.shape[0]
    logits = np.array([[track_f @ track_f, track_f @ det_f]])
    w = scaled_softmax_rows(logits, 1.0 / np.sqrt(c))[0]
    mixed = w[0] * track_f + w[1] * det_f
    return mixed + np.concatenate([track_f, det_f]) @ assoc_mix


def associate(tracks: list, detections: list, r_gate: float, max_coast: int,
              next_id: int, assoc_mix: np.ndarray, dt: float = 1.0):
    """Gated minimum-cost one-to-one assignment of detections to tracks.

    Returns (updated tracks, next_id).  Costs are distances from the
    constant-velocity-predicted track position to the detection center.
    Unmatched detections spawn fresh ids in detection order; unmatched
    tracks coast up to max_coast frames.
    """
    nt, nd = len(tracks), len(detections)
    matched_t, matched_d = set(), set()
    pairs = []
    if nt and nd:
        cost = np.full((nt, nd), GATE_COST)
        for i, tr in enumerate(tracks):
            pred = tr.box.center + tr.velocity * dt
            for j, de in enumerate(detections):
                d = float(np.hypot(pred[0] - de.box.x, pred[1] - de.box.y))
                if d <= r_gate:
                    cost[i, j] = d
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if cost[i, j] < GATE_COST:
                pairs.append((i, j))
                matched_t.add(i)
                matched_d.add(j)
    out = []
    for i, j in pairs:
        tr, de = tracks[i], detections[j]
        vel = (de.box.center - tr.box.center) / dt
        out.append(TrackQuery(tr.id, _refresh_feature(tr.feature, de.feature, assoc_mix),
                              de.box, tr.age + 1, de.score, 0, vel,
                              de.gt_id if de.gt_id is not None else tr.gt_id))
    for i, tr in enumerate(tracks):
        if i in matched_t:
            continue
        if tr.coast + 1 > max_coast:
            continue
        # dead-reckon a coasting track so it can be recaptured later
        coasted = Box(tr.box.x + float(tr.velocity[0]) * dt,
                      tr.box.y + float(tr.velocity[1]) * dt,
                      tr.box.length, tr.box.width, tr.box.yaw)
        out.append(TrackQuery(tr.id, tr.feature, coasted, tr.age + 1, tr.score,
                              tr.coast + 1, tr.velocity, tr.gt_id))
    for j, de in enumerate(detections):
        if j in matched_d:
            continue
        out.append(TrackQuery(next_id, de.feature.copy(), de.box, 0, de.score,
                              0, np.zeros(2), de.gt_id))
        next_id += 1
    out.sort(key=lambda t: t.id)
    return out, next_id


# ---------------------------------------------------------------------------
# per-frame perception step


def step_perception(bev: BEVFeature, ego_pose: Pose2D, state: PerceptionState,
                    weights: DetectorWeights, tau_det: float, r_gate: float,
                    max_coast: int, dt: float,
                    detections_override: list | None = None) -> PerceptionState:
    """detect -> associate -> refresh the ego query; mutates and returns state."""
    if detections_override is not None:
        dets = detections_override
    else:
        dets = detections_to_world(detect(bev, weights, tau_det), ego_pose)
    state.tracks, state.next_id = associate(
        state.tracks, dets, r_gate, max_coast, state.next_id,
        weights.assoc_mix, dt)
    c = bev.channels
    if state.ego is None:
        state.ego = EgoQuery(np.zeros(c), ego_pose)
    g = bev.grid
    center = np.array([[(g.h - 1) / 2.0, (g.w - 1) / 2.0]])
    samp = bilinear_sample(bev.data, center)[0]
    prev = state.ego.feature
    state.ego = EgoQuery(prev + np.concatenate([prev, samp]) @ weights.w_ego,
                         ego_pose)
    return state

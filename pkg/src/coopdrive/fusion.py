"""Temporal BEV fusion, infrastructure alignment and V2X feature fusion.

Both fusion blocks are deformable attention with the querying map's own
cell as reference point, added back through a zero-initialized tanh gate so
an untrained network reduces to the ego/current features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .attention import (DeformableAttnParams, deformable_attention,
                        deformable_attention_grads, init_deform_params)
from .bev import BEVFeature
from .geometry import Pose2D, relative_transform, warp_grid, warp_source_cells
from .tensor import bilinear_sample_with_grads, derive_seed, seeded_init

__all__ = ["TemporalState", "FusionBlockParams", "FusionParams", "temporal_fuse",
           "align_infrastructure", "v2x_fuse", "encode_v2x_message",
           "decode_v2x_message", "init_fusion_params"]


@dataclass
class TemporalState:
    prev: BEVFeature | None = None
    prev_pose: Pose2D = field(default_factory=Pose2D)

    def update(self, feat: BEVFeature, pose: Pose2D):
        self.prev = feat
        self.prev_pose = pose


@dataclass
class FusionBlockParams:
    attn: DeformableAttnParams
    w_gate: np.ndarray        # (2C, 1)
    b_gate: np.ndarray        # (1,)
    gate_override: float | None = None

    def gate(self, x: np.ndarray, attended: np.ndarray) -> np.ndarray:
        """Per-cell scalar gate in (-1, 1); zero weights give a closed gate."""
        if self.gate_override is not None:
            return np.full((x.shape[0], 1), float(self.gate_override))
        z = np.concatenate([x, attended], axis=1) @ self.w_gate + self.b_gate
        return np.tanh(z)


@dataclass
class FusionParams:
    temporal: FusionBlockParams
    v2x: FusionBlockParams


def init_fusion_params(channels: int, seed: int, heads: int = 2,
                       points: int = 4) -> FusionParams:
    def block(name):
        return FusionBlockParams(
            attn=init_deform_params(channels, heads, points, seed, f"{name}.attn"),
            w_gate=np.zeros((2 * channels, 1)),
            b_gate=np.zeros(1),
        )
    return FusionParams(block("temporal"), block("v2x"))


def _fuse_block(x_flat: np.ndarray, value_map: np.ndarray, refs: np.ndarray,
                block: FusionBlockParams, mask_flat: np.ndarray | None = None):
    attended = deformable_attention(x_flat, value_map, refs, block.attn)
    gate = block.gate(x_flat, attended)
    upd = gate * attended
    if mask_flat is not None:
        upd = mask_flat[:, None] * upd
    return x_flat + upd


def _self_refs(grid) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(grid.h), np.arange(grid.w), indexing="ij")
    return np.stack([ii.ravel(), jj.ravel()], axis=1).astype(np.float64)


def temporal_fuse(current: BEVFeature, current_pose: Pose2D, state: TemporalState,
                  params: FusionParams) -> BEVFeature:
    """Enhance the current BEV map with the motion-compensated previous one.

    The previous map is first rigidly aligned into the current frame (static
    scene alignment), then every current cell attends around its own
    location in it (dynamic target alignment).  First frame passes through.
    """
    if state.prev is None:
        return current
    prev = state.prev
    if not current.grid.same_geometry(prev.grid):
        raise ValueError("temporal fusion requires identical grid geometry")
    src_to_dst = relative_transform(state.prev_pose, current_pose)
    warped, _mask = warp_grid(prev.data, current.grid, src_to_dst)
    g = current.grid
    x = current.data.reshape(g.h * g.w, -1)
    fused = _fuse_block(x, warped, _self_refs(g), params.temporal)
    return BEVFeature(g, fused.reshape(current.data.shape),
                      current.agent_id, current.timestamp)


def align_infrastructure(inf: BEVFeature, inf_pose: Pose2D,
                         ego_pose: Pose2D, ego_grid) -> tuple[BEVFeature, np.ndarray]:
    """Warp the infrastructure BEV map into the ego frame.

    Returns the aligned map (zeros outside coverage) and the (H, W)
    validity mask marking where the source grid actually contributed.
    """
    if not inf.grid.same_geometry(ego_grid):
        raise ValueError("V2X alignment requires identical grid geometry")
    src_to_dst = relative_transform(inf_pose, ego_pose)
    warped, mask = warp_grid(inf.data, ego_grid, src_to_dst)
    aligned = BEVFeature(ego_grid, warped, inf.agent_id, inf.timestamp)
    return aligned, mask


def v2x_fuse(ego: BEVFeature, inf_aligned: BEVFeature, mask: np.ndarray,
             params: FusionParams) -> BEVFeature:
    """Fuse the aligned infrastructure map into the ego map.

    The update is masked by validity before the residual add, so cells the
    infrastructure never covered are bit-identical to the ego input.
    """
    if ego.data.shape != inf_aligned.data.shape:
        raise ValueError("ego and infrastructure maps must have equal shape")
    g = ego.grid
    x = ego.data.reshape(g.h * g.w, -1)
    fused = _fuse_block(x, inf_aligned.data, _self_refs(g), params.v2x,
                        mask_flat=np.asarray(mask, dtype=np.float64).ravel())
    return BEVFeature(g, fused.reshape(ego.data.shape), ego.agent_id, ego.timestamp)


# ---------------------------------------------------------------------------
# gradients for the verification suite


def fuse_block_grads(x_flat, source_map, refs, block: FusionBlockParams, d_out,
                     mask_flat=None, warp_coords=None, src_shape=None):
    """Gradients of the fused output w.r.t. x, the (pre-warp) source map,
    the attention parameters and the gate weights.

    If warp_coords is given, source_map is treated as warp(src) with the
    given bilinear sample coordinates and the gradient is pushed back to an
    array of src_shape.
    """
    attended = deformable_attention(x_flat, source_map, refs, block.attn)
    gate = block.gate(x_flat, attended)
    m = 1.0 if mask_flat is None else mask_flat[:, None]
    d_upd = np.asarray(d_out, dtype=np.float64) * m
    d_x = np.asarray(d_out, dtype=np.float64).copy()

    d_gate = (d_upd * attended).sum(axis=1, keepdims=True)
    d_attended = d_upd * gate
    dp_gate = {}
    if block.gate_override is None:
        z = np.concatenate([x_flat, attended], axis=1) @ block.w_gate + block.b_gate
        dz = d_gate * (1.0 - np.tanh(z) ** 2)
        cat = np.concatenate([x_flat, attended], axis=1)
        dp_gate["w_gate"] = cat.T @ dz
        dp_gate["b_gate"] = dz.sum(axis=0)
        d_cat = dz @ block.w_gate.T
        c = x_flat.shape[1]
        d_x += d_cat[:, :c]
        d_attended = d_attended + d_cat[:, c:]

    dq, d_map, dp_attn = deformable_attention_grads(
        x_flat, source_map, refs, block.attn, d_attended)
    d_x += dq

    if warp_coords is not None:
        _, d_feat_fn, _ = bilinear_sample_with_grads(
            np.zeros(src_shape), warp_coords)
        d_src = d_feat_fn(d_map.reshape(-1, d_map.shape[2]))
    else:
        d_src = d_map
    return d_x, d_src, dp_attn, dp_gate


def temporal_fuse_grads(current: BEVFeature, current_pose: Pose2D,
                        state: TemporalState, params: FusionParams, d_out):
    """Gradient of temporal fusion w.r.t. B_t, B_{t-1} and parameters."""
    g = current.grid
    src_to_dst = relative_transform(state.prev_pose, current_pose)
    coords, _inb = warp_source_cells(g, src_to_dst)
    warped, _ = warp_grid(state.prev.data, g, src_to_dst)
    x = current.data.reshape(g.h * g.w, -1)
    d_flat = np.asarray(d_out).reshape(g.h * g.w, -1)
    d_x, d_prev, dp_attn, dp_gate = fuse_block_grads(
        x, warped, _self_refs(g), params.temporal, d_flat,
        warp_coords=coords, src_shape=state.prev.data.shape)
    return d_x.reshape(current.data.shape), d_prev, dp_attn, dp_gate


def v2x_fuse_grads(ego: BEVFeature, inf_aligned: BEVFeature, mask,
                   params: FusionParams, d_out):
    g = ego.grid
    x = ego.data.reshape(g.h * g.w, -1)
    d_flat = np.asarray(d_out).reshape(g.h * g.w, -1)
    d_x, d_inf, dp_attn, dp_gate = fuse_block_grads(
        x, inf_aligned.data, _self_refs(g), params.v2x, d_flat,
        mask_flat=np.asarray(mask, dtype=np.float64).ravel())
    return d_x.reshape(ego.data.shape), d_inf, dp_attn, dp_gate


# ---------------------------------------------------------------------------
# V2X wire format

_HEADER = struct.Struct("<II3d")   # agent id, timestamp, pose (x, y, yaw)


def encode_v2x_message(feat: BEVFeature, pose: Pose2D) -> bytes:
    """agent-id u32, timestamp u32, pose 3 x f64, then H*W*C f32, all LE."""
    head = _HEADER.pack(feat.agent_id, feat.timestamp, pose.x, pose.y, pose.yaw)
    body = feat.data.astype("<f4").tobytes(order="C")
    return head + body


def decode_v2x_message(buf: bytes, grid) -> tuple[BEVFeature, Pose2D]:
    agent_id, ts, x, y, yaw = _HEADER.unpack_from(buf, 0)
    n = len(buf) - _HEADER.size
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size)
    c = data.size // (grid.h * grid.w)
    if c * grid.h * grid.w != data.size:
        raise ValueError(f"payload of {data.size} floats does not tile a "
                         f"{grid.h}x{grid.w} grid")
    feat = BEVFeature(grid, data.reshape(grid.h, grid.w, c).astype(np.float64),
                      agent_id, ts)
    return feat, Pose2D(x, y, yaw)

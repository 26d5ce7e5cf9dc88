"""Six-view images -> BEV features: small conv backbone plus an iterated
deformable spatial cross-attention encoder over pillar projections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import (DeformableAttnParams, deformable_attention,
                        init_deform_params)
from .geometry import BEVGrid, CameraRig, Pose2D, inverse, project_points, transform_points
from .tensor import derive_seed, seeded_init

__all__ = ["MultiViewImages", "MultiViewFeatures", "BEVFeature", "ConvStack",
           "EncoderWeights", "backbone_extract", "spatial_cross_attention",
           "encode_bev", "view_references", "PILLAR_HEIGHTS"]

PILLAR_HEIGHTS = (-1.0, 0.0, 1.0, 2.0)


@dataclass(frozen=True)
class MultiViewImages:
    views: tuple          # 6 arrays (h_img, w_img, 3) in [0, 1]
    timestamp: int = 0

    def __post_init__(self):
        if len(self.views) != 6:
            raise ValueError(f"expected 6 views, got {len(self.views)}")
        shapes = {v.shape for v in self.views}
        if len(shapes) != 1:
            raise ValueError(f"views disagree on shape: {shapes}")


@dataclass(frozen=True)
class MultiViewFeatures:
    views: tuple          # 6 arrays (h_f, w_f, C)
    stride: int


@dataclass(frozen=True)
class BEVFeature:
    grid: BEVGrid
    data: np.ndarray      # (H, W, C)
    agent_id: int = 0
    timestamp: int = 0

    def __post_init__(self):
        if self.data.shape[:2] != (self.grid.h, self.grid.w):
            raise ValueError(
                f"data {self.data.shape} does not match grid {(self.grid.h, self.grid.w)}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("BEV feature contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[2]


# ---------------------------------------------------------------------------
# backbone


@dataclass
class ConvStack:
    """Three 3x3 stride-2 conv layers with ReLU; shared across views."""

    kernels: list         # (3, 3, cin, cout) each
    biases: list

    @property
    def stride(self) -> int:
        return 2 ** len(self.kernels)

    @property
    def out_channels(self) -> int:
        return self.kernels[-1].shape[3]


def init_conv_stack(seed: int, name: str, channels: int = 32,
                    scale: float = 0.3) -> ConvStack:
    widths = [3, 8, channels // 2, channels]
    kernels, biases = [], []
    for i in range(3):
        cin, cout = widths[i], widths[i + 1]
        k = seeded_init((3, 3, cin, cout), derive_seed(seed, f"{name}.k{i}"),
                        "uniform", scale / np.sqrt(cin))
        kernels.append(k)
        biases.append(np.zeros(cout))
    return ConvStack(kernels, biases)


def _conv2d_s2(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    h, w, cin = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"image extents must be even, got {(h, w)}")
    padded = np.zeros((h + 2, w + 2, cin))
    padded[1:-1, 1:-1] = x
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(0, 1))
    win = win[::2, ::2]                       # (h/2, w/2, cin, 3, 3)
    out = np.einsum("xycij,ijco->xyo", win, kernel, optimize=False) + bias
    return np.maximum(out, 0.0)


def backbone_extract(images: MultiViewImages, stack: ConvStack) -> MultiViewFeatures:
    """Apply the shared conv stack to each of the 6 views independently."""
    feats = []
    for img in images.views:
        x = np.asarray(img, dtype=np.float64)
        for k, b in zip(stack.kernels, stack.biases):
            x = _conv2d_s2(x, k, b)
        feats.append(x)
    return MultiViewFeatures(tuple(feats), stack.stride)


# ---------------------------------------------------------------------------
# pillar projection cache


def view_references(grid: BEVGrid, rig: CameraRig, heights, stride: int):
    """Per view: which BEV cells it sees and where, in feature-map coords.

    Returns a list of (visible (H*W,) bool, refs (H*W, 2) row/col) pairs.
    The grid is assumed rigidly attached to the agent, so this depends only
    on static geometry.
    """
    centers = grid.cell_centers_local()       # agent-frame coords
    n = centers.shape[0]
    hs = np.asarray(heights, dtype=np.float64)
    out = []
    for view in rig.views:
        pts = np.repeat(centers, len(hs), axis=0)
        z = np.tile(hs, n)
        u, v, _d, vis = project_points(view, Pose2D(), pts, z)
        vis = vis.reshape(n, len(hs))
        u = u.reshape(n, len(hs))
        v = v.reshape(n, len(hs))
        cnt = vis.sum(axis=1)
        visible = cnt > 0
        safe = np.maximum(cnt, 1)
        # mean projected pixel over visible pillar points, in feature coords
        row = (v * vis).sum(axis=1) / safe / stride
        col = (u * vis).sum(axis=1) / safe / stride
        refs = np.stack([row, col], axis=1)
        refs[~visible] = 0.0
        out.append((visible, refs))
    return out


# ---------------------------------------------------------------------------
# encoder


@dataclass
class EncoderLayer:
    attn: DeformableAttnParams
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray


@dataclass
class EncoderWeights:
    backbone: ConvStack
    q_init: np.ndarray    # (H*W, C) learnable BEV prior
    layers: list = field(default_factory=list)


def init_encoder_weights(grid: BEVGrid, channels: int, seed: int, name: str,
                         layers: int = 6, heads: int = 2, points: int = 4) -> EncoderWeights:
    q0 = seeded_init((grid.h * grid.w, channels), derive_seed(seed, f"{name}.q_init"),
                     "uniform", 0.1)
    lys = []
    for i in range(layers):
        attn = init_deform_params(channels, heads, points, seed, f"{name}.layer{i}.attn")
        lys.append(EncoderLayer(
            attn=attn,
            mlp_w1=seeded_init((channels, channels),
                               derive_seed(seed, f"{name}.layer{i}.w1"), "uniform",
                               0.1 / np.sqrt(channels)),
            mlp_b1=np.zeros(channels),
            mlp_w2=seeded_init((channels, channels),
                               derive_seed(seed, f"{name}.layer{i}.w2"), "uniform",
                               0.1 / np.sqrt(channels)),
            mlp_b2=np.zeros(channels),
        ))
    return EncoderWeights(init_conv_stack(seed, f"{name}.backbone", channels), q0, lys)


def spatial_cross_attention(bev_query: np.ndarray, feats: MultiViewFeatures,
                            refs_per_view, params: DeformableAttnParams) -> np.ndarray:
    """One round of BEV-cell attention into the view feature maps.

    Cells visible in several views average those views' updates (fixed view
    order); cells visible nowhere pass through unchanged.
    """
    nq, c = bev_query.shape
    upd = np.zeros((nq, c))
    cnt = np.zeros(nq)
    for (visible, refs), fmap in zip(refs_per_view, feats.views):
        idx = np.nonzero(visible)[0]
        if idx.size == 0:
            continue
        out = deformable_attention(bev_query[idx], fmap, refs[idx], params)
        upd[idx] += out
        cnt[idx] += 1.0
    upd /= np.maximum(cnt, 1.0)[:, None]
    return bev_query + upd


def encode_bev(images: MultiViewImages, rig: CameraRig, grid: BEVGrid,
               weights: EncoderWeights, agent_id: int = 0,
               refs_per_view=None, heights=PILLAR_HEIGHTS) -> BEVFeature:
    """Full per-agent encoder: backbone, then the iterated cross-attention
    rounds with per-cell residual MLPs."""
    feats = backbone_extract(images, weights.backbone)
    if refs_per_view is None:
        refs_per_view = view_references(grid, rig, heights, feats.stride)
    x = weights.q_init.copy()
    for layer in weights.layers:
        x = spatial_cross_attention(x, feats, refs_per_view, layer.attn)
        hdn = np.maximum(x @ layer.mlp_w1 + layer.mlp_b1, 0.0)
        x = x + (hdn @ layer.mlp_w2 + layer.mlp_b2)
    c = x.shape[1]
    return BEVFeature(grid, x.reshape(grid.h, grid.w, c), agent_id, images.timestamp)

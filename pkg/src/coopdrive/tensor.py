"""Minimal dense-tensor layer: seeded init, the forward primitives the
pipeline is built from, and their hand-written backward passes.

Everything is float64 numpy underneath.  Summation order is fixed (einsum
with optimize disabled, no BLAS fan-out), so results are bit-identical
across runs and thread counts.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DenseTensor",
    "matmul",
    "linear_forward",
    "scaled_softmax_rows",
    "bilinear_sample",
    "backward",
    "seeded_init",
    "derive_seed",
    "record_softmax_rows",
]


class ShapeError(ValueError):
    """Operand shapes do not conform."""


@dataclass(frozen=True)
class DenseTensor:
    """Rank-1..4 real array with validated contents."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim < 1 or arr.ndim > 4:
            raise ShapeError(f"rank must be 1..4, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple:
        return self.data.shape


def _arr(x) -> np.ndarray:
    if isinstance(x, DenseTensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# seeded initialization

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + _GOLDEN).astype(np.uint64)
        z = x
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, name: str) -> int:
    """Stable per-parameter seed from a master seed and a parameter name."""
    h = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    for ch in name.encode():
        h = _splitmix64(np.asarray(h ^ np.uint64(ch)))
    return int(h)


def seeded_init(shape, seed: int, scheme: str = "uniform", a: float = 0.1) -> np.ndarray:
    """Counter-based deterministic init: value i depends only on (seed, i).

    scheme 'uniform' draws from (-a, a); 'zeros' returns zeros.
    """
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        return np.zeros(shape)
    if scheme != "uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if a <= 0:
        raise ValueError("uniform half-width must be positive")
    n = int(np.prod(shape)) if shape else 1
    with np.errstate(over="ignore"):
        base = _splitmix64(np.asarray(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        idx = np.arange(n, dtype=np.uint64)
        bits = _splitmix64(base ^ (idx * _GOLDEN))
    u = (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)  # [0, 1)
    return (a * (2.0 * u - 1.0)).reshape(shape)


# ---------------------------------------------------------------------------
# forward primitives


def matmul(a, b) -> np.ndarray:
    a, b = _arr(a), _arr(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    # einsum without optimize keeps a fixed summation order (determinism).
    return np.einsum("ij,jk->ik", a, b, optimize=False)


def linear_forward(x, weights, bias) -> np.ndarray:
    x, w, b = _arr(x), _arr(weights), _arr(bias)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(
            f"linear shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    return np.einsum("ij,jk->ik", x, w, optimize=False) + b


_softmax_recorder: list | None = None


@contextmanager
def record_softmax_rows():
    """Collect the row sums of every softmax evaluated inside the block."""
    global _softmax_recorder
    prev = _softmax_recorder
    _softmax_recorder = []
    try:
        yield _softmax_recorder
    finally:
        _softmax_recorder = prev


def scaled_softmax_rows(x, scale: float) -> np.ndarray:
    """Row-wise softmax of scale*x, stabilized by per-row max subtraction."""
    x = _arr(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax expects a 2-d input, got {x.shape}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    z = scale * x
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)
    if _softmax_recorder is not None:
        _softmax_recorder.extend(out.sum(axis=1).tolist())
    return out


def bilinear_sample(feat, points) -> np.ndarray:
    """Sample an (H, W, C) grid at continuous (row, col) coordinates.

    Points outside [0, H-1] x [0, W-1] yield the zero vector.
    Returns (P, C).
    """
    feat = _arr(feat)
    pts = _arr(points).reshape(-1, 2)
    if feat.ndim != 3:
        raise ShapeError(f"feature grid must be (H, W, C), got {feat.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("sample points must be finite")
    h, w, c = feat.shape
    u, v = pts[:, 0], pts[:, 1]
    inside = (u >= 0) & (u <= h - 1) & (v >= 0) & (v <= w - 1)
    uc = np.clip(u, 0, h - 1)
    vc = np.clip(v, 0, w - 1)
    i0 = np.floor(uc).astype(np.intp)
    j0 = np.floor(vc).astype(np.intp)
    i0 = np.minimum(i0, h - 2) if h > 1 else i0 * 0
    j0 = np.minimum(j0, w - 2) if w > 1 else j0 * 0
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fu = uc - i0
    fv = vc - j0
    w00 = (1 - fu) * (1 - fv)
    w01 = (1 - fu) * fv
    w10 = fu * (1 - fv)
    w11 = fu * fv
    out = (w00[:, None] * feat[i0, j0]
           + w01[:, None] * feat[i0, j1]
           + w10[:, None] * feat[i1, j0]
           + w11[:, None] * feat[i1, j1])
    out[~inside] = 0.0
    return out


def bilinear_sample_with_grads(feat, points):
    """Forward plus gradients helpers for the sampling primitive.

    Returns (out, d_feat_fn, d_points) where d_feat_fn(grad) scatters an
    upstream (P, C) gradient into the grid, and d_points is computed by
    d_points_fn(grad) -> (P, 2).
    """
    feat = _arr(feat)
    pts = _arr(points).reshape(-1, 2)
    h, w, c = feat.shape
    u, v = pts[:, 0], pts[:, 1]
    inside = (u >= 0) & (u <= h - 1) & (v >= 0) & (v <= w - 1)
    uc = np.clip(u, 0, h - 1)
    vc = np.clip(v, 0, w - 1)
    i0 = np.floor(uc).astype(np.intp)
    j0 = np.floor(vc).astype(np.intp)
    i0 = np.minimum(i0, h - 2) if h > 1 else i0 * 0
    j0 = np.minimum(j0, w - 2) if w > 1 else j0 * 0
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fu = uc - i0
    fv = vc - j0
    w00 = (1 - fu) * (1 - fv)
    w01 = (1 - fu) * fv
    w10 = fu * (1 - fv)
    w11 = fu * fv
    c00, c01, c10, c11 = feat[i0, j0], feat[i0, j1], feat[i1, j0], feat[i1, j1]
    out = (w00[:, None] * c00 + w01[:, None] * c01
           + w10[:, None] * c10 + w11[:, None] * c11)
    out[~inside] = 0.0
    ins = inside.astype(np.float64)

    def d_feat_fn(grad):
        grad = _arr(grad) * ins[:, None]
        d = np.zeros_like(feat)
        np.add.at(d, (i0, j0), w00[:, None] * grad)
        np.add.at(d, (i0, j1), w01[:, None] * grad)
        np.add.at(d, (i1, j0), w10[:, None] * grad)
        np.add.at(d, (i1, j1), w11[:, None] * grad)
        return d

    def d_points_fn(grad):
        grad = _arr(grad)
        # d out / d u and / d v at fixed corner cells.
        du = ((c10 - c00) * (1 - fv)[:, None] + (c11 - c01) * fv[:, None])
        dv = ((c01 - c00) * (1 - fu)[:, None] + (c11 - c10) * fu[:, None])
        gu = (grad * du).sum(axis=1) * ins
        gv = (grad * dv).sum(axis=1) * ins
        return np.stack([gu, gv], axis=1)

    return out, d_feat_fn, d_points_fn


# ---------------------------------------------------------------------------
# backward dispatcher


def backward(op: str, inputs: tuple, upstream) -> tuple:
    """Analytic gradients of one primitive w.r.t. each of its inputs."""
    g = _arr(upstream)
    if op == "matmul":
        a, b = (_arr(x) for x in inputs)
        da = np.einsum("ik,jk->ij", g, b, optimize=False)
        db = np.einsum("ij,ik->jk", a, g, optimize=False)
        return da, db
    if op == "linear_forward":
        x, w, _b = (_arr(i) for i in inputs)
        dx = np.einsum("ik,jk->ij", g, w, optimize=False)
        dw = np.einsum("ij,ik->jk", x, g, optimize=False)
        db = g.sum(axis=0)
        return dx, dw, db
    if op == "scaled_softmax_rows":
        x, scale = inputs
        y = scaled_softmax_rows(x, scale)
        dot = (g * y).sum(axis=1, keepdims=True)
        return (scale * y * (g - dot),)
    if op == "bilinear_sample":
        feat, points = inputs
        _, d_feat_fn, d_points_fn = bilinear_sample_with_grads(feat, points)
        return d_feat_fn(g), d_points_fn(g)
    raise ValueError(f"unknown op tag {op!r}")

"""Planar poses, BEV grid indexing, pinhole cameras and feature warping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import bilinear_sample

__all__ = [
    "Pose2D",
    "BEVGrid",
    "CameraView",
    "CameraRig",
    "compose",
    "inverse",
    "relative_transform",
    "transform_points",
    "warp_grid",
    "project_pillar",
    "default_rig",
]

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_tuple(self):
        return (self.x, self.y, self.yaw)


def compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Rigid composition a . b (apply b first, then a)."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose2D(a.x + c * b.x - s * b.y,
                  a.y + s * b.x + c * b.y,
                  a.yaw + b.yaw)


def inverse(p: Pose2D) -> Pose2D:
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    return Pose2D(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.yaw)


def relative_transform(frm: Pose2D, to: Pose2D) -> Pose2D:
    """Transform taking coordinates expressed in `frm` into the `to` frame.

    compose(to, relative_transform(frm, to)) == frm up to roundoff, so a
    point with `frm`-frame coordinates q lands on the same world point.
    """
    return compose(inverse(to), frm)


def transform_points(t: Pose2D, pts: np.ndarray) -> np.ndarray:
    """Apply a pose to an (N, 2) array of points."""
    pts = np.asarray(pts, dtype=np.float64)
    c, s = math.cos(t.yaw), math.sin(t.yaw)
    out = np.empty_like(pts)
    out[..., 0] = t.x + c * pts[..., 0] - s * pts[..., 1]
    out[..., 1] = t.y + s * pts[..., 0] + c * pts[..., 1]
    return out


@dataclass(frozen=True)
class BEVGrid:
    """H x W metric grid; the origin pose is the world pose of its center.

    Cell index i runs along the grid's local +x axis, j along +y.
    """

    h: int = 50
    w: int = 50
    resolution: float = 1.0
    origin: Pose2D = field(default_factory=Pose2D)

    def __post_init__(self):
        if self.h < 2 or self.w < 2:
            raise ValueError("grid needs at least 2x2 cells")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    def same_geometry(self, other: "BEVGrid") -> bool:
        return (self.h, self.w, self.resolution) == (other.h, other.w, other.resolution)

    def cell_to_local(self, ij: np.ndarray) -> np.ndarray:
        ij = np.asarray(ij, dtype=np.float64)
        out = np.empty_like(ij)
        out[..., 0] = (ij[..., 0] - (self.h - 1) / 2.0) * self.resolution
        out[..., 1] = (ij[..., 1] - (self.w - 1) / 2.0) * self.resolution
        return out

    def local_to_cell(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        out = np.empty_like(pts)
        out[..., 0] = pts[..., 0] / self.resolution + (self.h - 1) / 2.0
        out[..., 1] = pts[..., 1] / self.resolution + (self.w - 1) / 2.0
        return out

    def cell_to_world(self, ij: np.ndarray) -> np.ndarray:
        return transform_points(self.origin, self.cell_to_local(ij))

    def world_to_cell(self, pts: np.ndarray) -> np.ndarray:
        local = transform_points(inverse(self.origin), pts)
        return self.local_to_cell(local)

    def cell_centers_local(self) -> np.ndarray:
        """(H*W, 2) local coordinates of all cell centers, row-major."""
        ii, jj = np.meshgrid(np.arange(self.h), np.arange(self.w), indexing="ij")
        ij = np.stack([ii.ravel(), jj.ravel()], axis=1).astype(np.float64)
        return self.cell_to_local(ij)


def warp_source_cells(grid: BEVGrid, src_to_dst: Pose2D) -> tuple[np.ndarray, np.ndarray]:
    """Continuous source cell coords for every target cell, plus validity.

    `src_to_dst` maps source-local coordinates into target-local coordinates;
    target cell centers are pulled back through its inverse.  Returns
    (coords (H*W, 2), in_bounds (H*W,) bool).
    """
    centers = grid.cell_centers_local()
    src_local = transform_points(inverse(src_to_dst), centers)
    coords = grid.local_to_cell(src_local)
    # tolerate float noise at the boundary (e.g. sin(pi) != 0 exactly)
    tol = 1e-9
    inb = ((coords[:, 0] >= -tol) & (coords[:, 0] <= grid.h - 1 + tol)
           & (coords[:, 1] >= -tol) & (coords[:, 1] <= grid.w - 1 + tol))
    clipped = np.stack([np.clip(coords[:, 0], 0.0, grid.h - 1.0),
                        np.clip(coords[:, 1], 0.0, grid.w - 1.0)], axis=1)
    coords = np.where(inb[:, None], clipped, coords)
    return coords, inb


def warp_grid(feat: np.ndarray, grid: BEVGrid, src_to_dst: Pose2D) -> tuple[np.ndarray, np.ndarray]:
    """Resample an (H, W, C) feature map into a rigidly moved target frame.

    Cells mapping outside the source grid get the zero vector.  Returns the
    warped map and the (H, W) validity mask.
    """
    feat = np.asarray(feat, dtype=np.float64)
    if feat.shape[:2] != (grid.h, grid.w):
        raise ValueError(f"feature {feat.shape} does not match grid {(grid.h, grid.w)}")
    coords, inb = warp_source_cells(grid, src_to_dst)
    out = bilinear_sample(feat, coords).reshape(grid.h, grid.w, feat.shape[2])
    return out, inb.reshape(grid.h, grid.w).astype(np.float64)


# ---------------------------------------------------------------------------
# cameras


@dataclass(frozen=True)
class CameraView:
    """Pinhole view mounted on an agent; optical axis along pose yaw."""

    pose: Pose2D              # mounting offset in the agent frame
    height: float             # mounting height above ground, meters
    hfov: float               # horizontal field of view, radians
    width_px: int
    height_px: int

    def __post_init__(self):
        if not (0.0 < self.hfov < math.pi):
            raise ValueError("horizontal FOV must be in (0, pi)")

    @property
    def focal(self) -> float:
        return (self.width_px / 2.0) / math.tan(self.hfov / 2.0)


@dataclass(frozen=True)
class CameraRig:
    views: tuple

    def __post_init__(self):
        if len(self.views) != 6:
            raise ValueError(f"rig must carry exactly 6 views, got {len(self.views)}")


def default_rig(width_px: int = 96, height_px: int = 64,
                hfov: float = math.radians(80.0), height: float = 1.6) -> CameraRig:
    yaws = [0.0, 60.0, 120.0, 180.0, -120.0, -60.0]
    views = tuple(
        CameraView(Pose2D(0.0, 0.0, math.radians(y)), height, hfov, width_px, height_px)
        for y in yaws)
    return CameraRig(views)


def project_points(view: CameraView, agent_pose: Pose2D, pts_world: np.ndarray,
                   heights: np.ndarray):
    """Project world (x, y) points with explicit z into one view.

    pts_world: (N, 2), heights: (N,).  Returns (u, v, depth, visible) arrays;
    u is the column, v the row, both in pixels.
    """
    cam_pose = compose(agent_pose, view.pose)
    local = transform_points(inverse(cam_pose), pts_world)
    xc = local[:, 0]
    yc = local[:, 1]
    zc = np.asarray(heights, dtype=np.float64) - view.height
    f = view.focal
    eps = 1e-9
    safe_x = np.where(np.abs(xc) < eps, eps, xc)
    u = view.width_px / 2.0 - f * yc / safe_x
    v = view.height_px / 2.0 - f * zc / safe_x
    visible = (xc > eps) & (u >= 0) & (u <= view.width_px - 1) \
        & (v >= 0) & (v <= view.height_px - 1)
    return u, v, xc, visible


def project_pillar(grid: BEVGrid, cell: tuple, heights, rig: CameraRig, view_idx: int,
                   agent_pose: Pose2D | None = None):
    """Project the 3-d pillar above one BEV cell center into one view.

    Returns a list of (u, v, visible) per pillar height.  The agent pose
    defaults to the grid origin (grid attached to the agent).
    """
    i, j = cell
    if not (0 <= i < grid.h and 0 <= j < grid.w):
        raise ValueError(f"cell {cell} outside {grid.h}x{grid.w} grid")
    if not (0 <= view_idx < len(rig.views)):
        raise ValueError(f"view index {view_idx} out of range")
    pose = grid.origin if agent_pose is None else agent_pose
    world = grid.cell_to_world(np.array([[float(i), float(j)]]))
    hs = np.asarray(heights, dtype=np.float64)
    pts = np.repeat(world, len(hs), axis=0)
    u, v, _depth, vis = project_points(rig.views[view_idx], pose, pts, hs)
    return [(float(u[k]), float(v[k]), bool(vis[k])) for k in range(len(hs))]

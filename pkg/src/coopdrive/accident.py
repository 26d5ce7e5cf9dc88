"""Collision post-processing: oriented-rectangle footprints, minimum
distance, per-timestamp collision events and prediction scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Box", "FootprintPolygon", "CollisionEvent", "AccidentScore",
           "footprint", "min_distance", "min_distance_points",
           "detect_collisions", "trajectory_boxes", "predict_accident", "score"]


@dataclass(frozen=True)
class Box:
    """Oriented box: center (x, y), length along yaw, width across."""

    x: float
    y: float
    length: float
    width: float
    yaw: float

    @property
    def center(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class FootprintPolygon:
    vertices: np.ndarray   # (4, 2), counter-clockwise

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.shape != (4, 2):
            raise ValueError("footprint needs exactly 4 vertices")
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        return 0.5 * float(np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]))


@dataclass(frozen=True)
class CollisionEvent:
    id_a: int
    id_b: int
    timestamp: int
    position: tuple
    min_distance: float

    def __post_init__(self):
        if self.id_a == self.id_b:
            raise ValueError("an agent cannot collide with itself")
        if self.id_a > self.id_b:
            a, b = self.id_b, self.id_a
            object.__setattr__(self, "id_a", a)
            object.__setattr__(self, "id_b", b)


@dataclass
class AccidentScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    matches: list = None   # (pred, gt, time_error, pos_error)

    def __post_init__(self):
        if self.matches is None:
            self.matches = []


def footprint(box: Box) -> FootprintPolygon:
    if box.length <= 0 or box.width <= 0:
        raise ValueError(f"box dims must be positive, got {box.length}x{box.width}")
    hl, hw = box.length / 2.0, box.width / 2.0
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return FootprintPolygon(local @ rot.T + box.center)


def _edges(v: np.ndarray) -> np.ndarray:
    return np.roll(v, -1, axis=0) - v


def _polygons_intersect(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons."""
    for verts in (a, b):
        for e in _edges(verts):
            axis = np.array([-e[1], e[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _closest_on_segments(p: np.ndarray, v: np.ndarray):
    """Closest points on a polygon boundary to each query point p (N, 2)."""
    e = _edges(v)                               # (4, 2)
    rel = p[:, None, :] - v[None, :, :]         # (N, 4, 2)
    ee = (e * e).sum(axis=1)
    t = np.clip((rel * e[None]).sum(axis=2) / ee[None], 0.0, 1.0)
    proj = v[None] + t[..., None] * e[None]     # (N, 4, 2)
    d2 = ((p[:, None, :] - proj) ** 2).sum(axis=2)
    k = d2.argmin(axis=1)
    idx = np.arange(len(p))
    return proj[idx, k], np.sqrt(d2[idx, k])


def min_distance_points(a: FootprintPolygon, b: FootprintPolygon):
    """(distance, point_on_a, point_on_b); distance 0 when they intersect,
    in which case the points collapse to the centroid midpoint."""
    va, vb = a.vertices, b.vertices
    if _polygons_intersect(va, vb):
        mid = (va.mean(axis=0) + vb.mean(axis=0)) / 2.0
        return 0.0, mid, mid
    pb, db = _closest_on_segments(va, vb)       # A vertices vs B edges
    pa, da = _closest_on_segments(vb, va)       # B vertices vs A edges
    ia, ib = da.argmin(), db.argmin()
    if da[ia] <= db[ib]:
        return float(da[ia]), pa[ia], vb[ia]
    return float(db[ib]), va[ib], pb[ib]


def min_distance(a: FootprintPolygon, b: FootprintPolygon) -> float:
    return min_distance_points(a, b)[0]


def detect_collisions(trajectories: dict, threshold: float,
                      start_timestamp: int = 0) -> list:
    """Scan box sequences frame by frame for footprint distances below the
    safety threshold.

    trajectories: agent id -> list of Box, all sequences equally long.
    Emits one event per unordered pair, at the first offending frame.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    ids = sorted(trajectories)
    if not ids:
        return []
    n_frames = len(trajectories[ids[0]])
    for i in ids:
        if len(trajectories[i]) != n_frames:
            raise ValueError("trajectories must have equal length")
    events = []
    seen = set()
    for t in range(n_frames):
        polys = {i: footprint(trajectories[i][t]) for i in ids}
        for ai in range(len(ids)):
            for bi in range(ai + 1, len(ids)):
                pair = (ids[ai], ids[bi])
                if pair in seen:
                    continue
                d, pa, pb = min_distance_points(polys[pair[0]], polys[pair[1]])
                if d < threshold:
                    mid = (pa + pb) / 2.0
                    if d == 0.0:
                        ca = trajectories[pair[0]][t]
                        cb = trajectories[pair[1]][t]
                        mid = (ca.center + cb.center) / 2.0
                    events.append(CollisionEvent(pair[0], pair[1],
                                                 start_timestamp + t,
                                                 (float(mid[0]), float(mid[1])), d))
                    seen.add(pair)
    return events


def trajectory_boxes(points: np.ndarray, dims: tuple, current_yaw: float) -> list:
    """Boxes along a (T, 2) path; heading from consecutive displacement,
    falling back to the running heading for tiny steps."""
    length, width = dims
    boxes = []
    yaw = current_yaw
    prev = None
    for p in np.asarray(points, dtype=np.float64):
        if prev is not None:
            dx, dy = p[0] - prev[0], p[1] - prev[1]
            if math.hypot(dx, dy) > 1e-9:
                yaw = math.atan2(dy, dx)
        boxes.append(Box(float(p[0]), float(p[1]), length, width, yaw))
        prev = p
    return boxes


def predict_accident(motion, current_boxes: dict, threshold: float,
                     start_timestamp: int = 0, policy: str = "top1") -> list:
    """Collision events implied by predicted trajectories.

    motion: a MotionOutput with world-frame trajectories (N, K, T, 2) and
    mode scores (N, K).  policy 'top1' uses each agent's best-scoring mode;
    'any' reports a pair if any mode pair collides (earliest frame wins).
    """
    ids = list(motion.agent_ids)
    if policy == "top1":
        best = motion.scores.argmax(axis=1)
        trajs = {}
        for n, aid in enumerate(ids):
            box = current_boxes[aid]
            trajs[aid] = trajectory_boxes(motion.trajectories[n, best[n]],
                                          (box.length, box.width), box.yaw)
        return detect_collisions(trajs, threshold, start_timestamp)
    if policy != "any":
        raise ValueError(f"unknown mode policy {policy!r}")
    k = motion.trajectories.shape[1]
    boxes_nk = {}
    for n, aid in enumerate(ids):
        box = current_boxes[aid]
        boxes_nk[aid] = [trajectory_boxes(motion.trajectories[n, m],
                                          (box.length, box.width), box.yaw)
                         for m in range(k)]
    found = {}
    for an in range(len(ids)):
        for bn in range(an + 1, len(ids)):
            a, b = ids[an], ids[bn]
            for ka in range(k):
                for kb in range(k):
                    evs = detect_collisions({a: boxes_nk[a][ka], b: boxes_nk[b][kb]},
                                            threshold, start_timestamp)
                    for ev in evs:
                        key = (ev.id_a, ev.id_b)
                        if key not in found or ev.timestamp < found[key].timestamp:
                            found[key] = ev
    return sorted(found.values(), key=lambda e: (e.timestamp, e.id_a, e.id_b))


def score(pred: list, gt: list, time_tol: int = 1, dist_tol: float = 2.0) -> AccidentScore:
    """Greedy one-to-one matching of predicted to ground-truth events."""
    if time_tol < 0 or dist_tol < 0:
        raise ValueError("tolerances must be non-negative")
    cands = []
    for pi, p in enumerate(pred):
        for gi, g in enumerate(gt):
            if (p.id_a, p.id_b) != (g.id_a, g.id_b):
                continue
            dt = abs(p.timestamp - g.timestamp)
            derr = math.hypot(p.position[0] - g.position[0],
                              p.position[1] - g.position[1])
            if dt <= time_tol and derr <= dist_tol:
                cands.append((dt, derr, pi, gi))
    cands.sort()
    used_p, used_g = set(), set()
    out = AccidentScore()
    for dt, derr, pi, gi in cands:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        out.matches.append((pred[pi], gt[gi], dt, derr))
    out.tp = len(out.matches)
    out.fp = len(pred) - out.tp
    out.fn = len(gt) - out.tp
    return out

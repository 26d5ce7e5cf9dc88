"""Synthetic driving scenarios: scripted agents, template generation with
collision contracts, and flat-shaded six-view rasterization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .accident import Box, detect_collisions
from .bev import MultiViewImages
from .geometry import CameraRig, Pose2D, compose, default_rig, inverse, transform_points
from .tensor import seeded_init

__all__ = ["Segment", "AgentScript", "Scenario", "generate_scenario",
           "render_views", "TEMPLATES", "scenario_to_text", "scenario_from_text",
           "ground_truth_boxes", "ground_truth_trajectories"]

TEMPLATES = ("crossing", "following", "merging", "benign")

SKY = (0.55, 0.70, 0.90)
GROUND = (0.35, 0.33, 0.30)
BOX_HEIGHT = 1.6


@dataclass(frozen=True)
class Segment:
    frames: int
    speed: float          # m/s
    yaw_rate: float = 0.0  # rad/s


@dataclass(frozen=True)
class AgentScript:
    agent_id: int
    start: Pose2D
    dims: tuple           # (length, width)
    segments: tuple

    def pose_at(self, t: int, dt: float) -> Pose2D:
        x, y, yaw = self.start.x, self.start.y, self.start.yaw
        remaining = t
        for seg in self.segments:
            steps = min(remaining, seg.frames)
            for _ in range(steps):
                x += seg.speed * dt * math.cos(yaw)
                y += seg.speed * dt * math.sin(yaw)
                yaw += seg.yaw_rate * dt
            remaining -= steps
            if remaining == 0:
                break
        return Pose2D(x, y, yaw)

    def speed_at(self, t: int) -> float:
        remaining = t
        for seg in self.segments:
            if remaining < seg.frames:
                return seg.speed
            remaining -= seg.frames
        return self.segments[-1].speed

    def box_at(self, t: int, dt: float) -> Box:
        p = self.pose_at(t, dt)
        return Box(p.x, p.y, self.dims[0], self.dims[1], p.yaw)


@dataclass(frozen=True)
class Scenario:
    seed: int
    template: str
    frames: int
    dt: float
    ego: AgentScript
    agents: tuple         # non-ego scripts
    inf_pose: Pose2D
    collision_scripted: bool

    def all_scripts(self):
        return (self.ego,) + self.agents


def ground_truth_boxes(scn: Scenario, t: int) -> dict:
    return {s.agent_id: s.box_at(t, scn.dt) for s in scn.all_scripts()}


def ground_truth_trajectories(scn: Scenario) -> dict:
    return {s.agent_id: [s.box_at(t, scn.dt) for t in range(scn.frames)]
            for s in scn.all_scripts()}


def _jitter(seed: int, tag: int, half: float) -> float:
    return float(seeded_init((1,), seed * 1000003 + tag, "uniform", half)[0])


def generate_scenario(seed: int, template: str, frames: int = 12,
                      dt: float = 0.5, threshold: float = 0.5) -> Scenario:
    """Deterministic scenario from a template; crossing/merging guarantee a
    scripted collision, benign/following guarantee none."""
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; choose from {TEMPLATES}")
    dims = (4.0, 2.0)
    v_ego = 4.0 + _jitter(seed, 1, 0.5)
    t_c = frames // 2
    if template == "crossing":
        v_a = 4.0 + _jitter(seed, 2, 0.5)
        ego = AgentScript(0, Pose2D(-v_ego * dt * t_c, 0.0, 0.0), dims,
                          (Segment(frames, v_ego),))
        crosser = AgentScript(1, Pose2D(0.0, -v_a * dt * t_c, math.pi / 2), dims,
                              (Segment(frames, v_a),))
        far = AgentScript(2, Pose2D(30.0, 20.0, 0.0), dims,
                          (Segment(frames, 3.0),))
        scn = Scenario(seed, template, frames, dt, ego, (crosser, far),
                       Pose2D(5.0, 12.0, -math.pi / 2), True)
    elif template == "merging":
        v_a = v_ego
        theta = math.radians(-25.0) + _jitter(seed, 3, 0.05)
        meet = np.array([v_ego * dt * t_c * 0.5, 0.0])
        ego = AgentScript(0, Pose2D(float(meet[0]) - v_ego * dt * t_c, 0.0, 0.0), dims,
                          (Segment(frames, v_ego),))
        start = meet - v_a * dt * t_c * np.array([math.cos(theta), math.sin(theta)])
        merger = AgentScript(1, Pose2D(float(start[0]), float(start[1]), theta), dims,
                             (Segment(frames, v_a),))
        scn = Scenario(seed, template, frames, dt, ego, (merger,),
                       Pose2D(5.0, 12.0, -math.pi / 2), True)
    elif template == "following":
        gap = 12.0 + _jitter(seed, 4, 2.0)
        ego = AgentScript(0, Pose2D(-15.0, 0.0, 0.0), dims, (Segment(frames, v_ego),))
        lead = AgentScript(1, Pose2D(-15.0 + gap, 0.0, 0.0), dims,
                           (Segment(frames, v_ego),))
        scn = Scenario(seed, template, frames, dt, ego, (lead,),
                       Pose2D(5.0, 12.0, -math.pi / 2), False)
    else:  # benign
        lane = 6.0 + _jitter(seed, 5, 1.0)
        ego = AgentScript(0, Pose2D(-18.0, 0.0, 0.0), dims, (Segment(frames, v_ego),))
        a1 = AgentScript(1, Pose2D(-8.0, lane, 0.0), dims,
                         (Segment(frames, 4.0 + _jitter(seed, 6, 0.5)),))
        a2 = AgentScript(2, Pose2D(18.0, -lane, math.pi), dims,
                         (Segment(frames, 4.0 + _jitter(seed, 7, 0.5)),))
        scn = Scenario(seed, template, frames, dt, ego, (a1, a2),
                       Pose2D(5.0, 12.0, -math.pi / 2), False)

    events = detect_collisions(ground_truth_trajectories(scn), threshold)
    if scn.collision_scripted and len(events) != 1:
        raise RuntimeError(
            f"template {template!r} must script exactly one collision, got {len(events)}")
    if not scn.collision_scripted and events:
        raise RuntimeError(f"template {template!r} must stay collision free")
    return scn


# ---------------------------------------------------------------------------
# plain-text serialization


def scenario_to_text(scn: Scenario) -> str:
    lines = [
        f"seed {scn.seed}",
        f"template {scn.template}",
        f"frames {scn.frames}",
        f"dt {scn.dt!r}",
        f"inf_pose {scn.inf_pose.x!r} {scn.inf_pose.y!r} {scn.inf_pose.yaw!r}",
        f"collision_scripted {int(scn.collision_scripted)}",
    ]
    for s in scn.all_scripts():
        seg = " ".join(f"{g.frames} {g.speed!r} {g.yaw_rate!r}" for g in s.segments)
        lines.append(f"agent {s.agent_id} {s.start.x!r} {s.start.y!r} "
                     f"{s.start.yaw!r} {s.dims[0]!r} {s.dims[1]!r} {seg}")
    return "\n".join(lines) + "\n"


def scenario_from_text(text: str) -> Scenario:
    head = {}
    scripts = []
    for line in text.splitlines():
        if not line.strip():
            continue
        key, rest = line.split(" ", 1)
        if key == "agent":
            parts = rest.split()
            aid = int(parts[0])
            start = Pose2D(float(parts[1]), float(parts[2]), float(parts[3]))
            dims = (float(parts[4]), float(parts[5]))
            raw = parts[6:]
            segs = tuple(Segment(int(raw[i]), float(raw[i + 1]), float(raw[i + 2]))
                         for i in range(0, len(raw), 3))
            scripts.append(AgentScript(aid, start, dims, segs))
        else:
            head[key] = rest
    ix, iy, iyaw = (float(v) for v in head["inf_pose"].split())
    ego = next(s for s in scripts if s.agent_id == 0)
    agents = tuple(s for s in scripts if s.agent_id != 0)
    return Scenario(int(head["seed"]), head["template"], int(head["frames"]),
                    float(head["dt"]), ego, agents, Pose2D(ix, iy, iyaw),
                    bool(int(head["collision_scripted"])))


# ---------------------------------------------------------------------------
# rasterization


def _agent_color(agent_id: int) -> np.ndarray:
    palette = np.array([
        (0.85, 0.25, 0.20), (0.20, 0.55, 0.85), (0.90, 0.75, 0.20),
        (0.45, 0.80, 0.35), (0.70, 0.35, 0.80), (0.90, 0.50, 0.60),
    ])
    return palette[agent_id % len(palette)]


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; pts (N, 2), returns hull CCW."""
    pts = np.unique(np.round(pts, 6), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(tuple(p))
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(tuple(p))
    return np.array(lower[:-1] + upper[:-1])


def _fill_polygon(img: np.ndarray, poly: np.ndarray, color: np.ndarray):
    """Scanline fill of a convex polygon given in (u, v) pixel coords."""
    h, w, _ = img.shape
    if len(poly) < 3:
        return
    v_min = max(int(math.ceil(poly[:, 1].min())), 0)
    v_max = min(int(math.floor(poly[:, 1].max())), h - 1)
    n = len(poly)
    for row in range(v_min, v_max + 1):
        xs = []
        for i in range(n):
            u0, v0 = poly[i]
            u1, v1 = poly[(i + 1) % n]
            if (v0 <= row < v1) or (v1 <= row < v0):
                tpar = (row - v0) / (v1 - v0)
                xs.append(u0 + tpar * (u1 - u0))
        if len(xs) < 2:
            continue
        lo = max(int(math.ceil(min(xs))), 0)
        hi = min(int(math.floor(max(xs))), w - 1)
        if lo <= hi:
            img[row, lo:hi + 1] = color


def _box_corners_3d(box: Box) -> tuple:
    hl, hw = box.length / 2.0, box.width / 2.0
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    ground = local @ rot.T + np.array([box.x, box.y])
    pts = np.vstack([ground, ground])
    z = np.array([0.0] * 4 + [BOX_HEIGHT] * 4)
    return pts, z


def render_views(scn: Scenario, t: int, viewer: str = "ego",
                 rig: CameraRig | None = None) -> MultiViewImages:
    """Flat-shaded rasterization of the scene into the six pinhole views of
    the ego vehicle or the infrastructure unit."""
    if not (0 <= t < scn.frames):
        raise ValueError(f"frame {t} outside 0..{scn.frames - 1}")
    if viewer not in ("ego", "infrastructure"):
        raise ValueError(f"viewer must be ego or infrastructure, got {viewer!r}")
    rig = rig or default_rig()
    if viewer == "ego":
        pose = scn.ego.pose_at(t, scn.dt)
        skip = {0}
    else:
        pose = scn.inf_pose
        skip = set()
    boxes = {aid: b for aid, b in ground_truth_boxes(scn, t).items()
             if aid not in skip}
    near = 0.3
    images = []
    for view in rig.views:
        hpx, wpx = view.height_px, view.width_px
        img = np.empty((hpx, wpx, 3))
        horizon = hpx // 2
        img[:horizon] = SKY
        img[horizon:] = GROUND
        cam_pose = compose(pose, view.pose)
        to_cam = inverse(cam_pose)
        order = sorted(boxes,
                       key=lambda a: -math.hypot(boxes[a].x - cam_pose.x,
                                                 boxes[a].y - cam_pose.y))
        f = view.focal
        for aid in order:
            pts, z = _box_corners_3d(boxes[aid])
            local = transform_points(to_cam, pts)
            xc = local[:, 0]
            if np.all(xc <= near):
                continue
            xs = np.maximum(xc, near)
            u = wpx / 2.0 - f * local[:, 1] / xs
            v = hpx / 2.0 - f * (z - view.height) / xs
            hull = _convex_hull(np.stack([u, v], axis=1))
            if (hull[:, 0].max() < 0 or hull[:, 0].min() > wpx - 1
                    or hull[:, 1].max() < 0 or hull[:, 1].min() > hpx - 1):
                continue
            _fill_polygon(img, hull, _agent_color(aid))
        images.append(img)
    return MultiViewImages(tuple(images), t)

"""Deterministic SVG emission for persisted runs: per-frame BEV energy
heatmaps and trajectory fans with collision markers."""

from __future__ import annotations

import math
from pathlib import Path

__all__ = ["emit_plots", "PLOT_KINDS"]

PLOT_KINDS = ("bev", "traj")

_PALETTE = ("#d94f33", "#338cd9", "#d9b833", "#5ecc59", "#9e59cc", "#cc5987")


def _color(agent_id: int) -> str:
    return _PALETTE[agent_id % len(_PALETTE)]


def _parse_frames(record_dir: Path):
    frames = []
    files = sorted(p for p in (record_dir / "frames").glob("frame_*.txt")
                   if not p.name.endswith("_bev.txt"))
    for path in files:
        t = int(path.stem.split("_")[1])
        gt, tracks, motion, events = {}, [], [], []
        for line in path.read_text().splitlines():
            parts = line.split()
            if parts[0] == "gt":
                gt[int(parts[1])] = tuple(float(v) for v in parts[2:7])
            elif parts[0] == "track":
                tracks.append((int(parts[1]),
                               tuple(float(v) for v in parts[3:8])))
            elif parts[0] == "motion":
                pts = [float(v) for v in parts[4:]]
                xy = [(pts[i], pts[i + 1]) for i in range(0, len(pts), 2)]
                motion.append((int(parts[1]), int(parts[2]), float(parts[3]), xy))
            elif parts[0] == "event":
                seg = line.split(" ", 1)[1].split(",")
                events.append((int(seg[0]), float(seg[3]), float(seg[4])))
        energy = []
        for row in (record_dir / "frames" / f"frame_{t:04d}_bev.txt") \
                .read_text().splitlines():
            energy.append([float(v) for v in row.split()])
        frames.append(dict(t=t, gt=gt, tracks=tracks, motion=motion,
                           events=events, energy=energy))
    return frames


def _svg(width: int, height: int, body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">')
    return "\n".join([head] + body + ["</svg>", ""])


def _bev_svg(frame, cell: int = 8) -> str:
    energy = frame["energy"]
    h, w = len(energy), len(energy[0])
    peak = max(max(row) for row in energy) or 1.0
    body = []
    for i in range(h):
        for j in range(w):
            level = int(255 * energy[i][j] / peak)
            body.append(
                f'<rect x="{j * cell}" y="{(h - 1 - i) * cell}" width="{cell}" '
                f'height="{cell}" fill="rgb({level},{level},{level})"/>')
    return _svg(w * cell, h * cell, body)


def _traj_svg(frame, extent: float = 60.0, scale: float = 6.0) -> str:
    size = int(2 * extent * scale)

    def sx(x):
        return f"{(x + extent) * scale:.3f}"

    def sy(y):
        return f"{(extent - y) * scale:.3f}"

    body = [f'<rect x="0" y="0" width="{size}" height="{size}" fill="#f4f4f0"/>']
    for aid, (x, y, length, width, yaw) in sorted(frame["gt"].items()):
        c, s = math.cos(yaw), math.sin(yaw)
        hl, hw = length / 2, width / 2
        pts = []
        for dx, dy in ((hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)):
            pts.append(f"{sx(x + c * dx - s * dy)},{sy(y + s * dx + c * dy)}")
        body.append(f'<polygon points="{" ".join(pts)}" fill="none" '
                    f'stroke="{_color(aid)}" stroke-width="1.5"/>')
    # motion trajectories are stored in the ego frame; lift them to world
    # through the ego ground-truth pose for display
    ex0, ey0, _l, _w, eyaw = frame["gt"].get(0, (0.0, 0.0, 0.0, 0.0, 0.0))
    ec, es = math.cos(eyaw), math.sin(eyaw)
    for aid, mode, sc, xy in frame["motion"]:
        world = [(ex0 + ec * px - es * py, ey0 + es * px + ec * py)
                 for px, py in xy]
        pts = " ".join(f"{sx(px)},{sy(py)}" for px, py in world)
        opacity = f"{0.25 + 0.75 * sc:.3f}"
        body.append(f'<polyline points="{pts}" fill="none" '
                    f'stroke="{_color(aid)}" stroke-width="1" '
                    f'stroke-opacity="{opacity}"/>')
    for _t, ex, ey in frame["events"]:
        body.append(f'<circle cx="{sx(ex)}" cy="{sy(ey)}" r="6" fill="none" '
                    f'stroke="#cc1111" stroke-width="2"/>')
    return _svg(size, size, body)


def emit_plots(record_dir, out_dir) -> list:
    """Write frame_<t>_<kind>.svg files for a persisted run; returns paths."""
    record_dir = Path(record_dir)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise RuntimeError(f"output directory not writable: {e}") from e
    written = []
    for frame in _parse_frames(record_dir):
        t = frame["t"]
        for kind, maker in (("bev", _bev_svg), ("traj", _traj_svg)):
            path = out / f"frame_{t}_{kind}.svg"
            path.write_text(maker(frame))
            written.append(path)
    return written

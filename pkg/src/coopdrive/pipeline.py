"""Full-pipeline orchestration: per-frame render -> encode -> fuse ->
perceive -> predict -> collision post-processing, plus RunRecord
persistence and cross-scenario evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accident import (Box, CollisionEvent, detect_collisions, predict_accident,
                       score)
from .bev import BEVFeature, encode_bev, init_encoder_weights, view_references
from .config import PipelineConfig, config_hash, config_to_text
from .fusion import (FusionParams, TemporalState, align_infrastructure,
                     decode_v2x_message, encode_v2x_message, init_fusion_params,
                     temporal_fuse, v2x_fuse)
from .geometry import BEVGrid, CameraView, CameraRig, Pose2D, transform_points
from .motion import EGO_ID, MotionOutput, init_motion_weights, predict_motion
from .scenario import (Scenario, ground_truth_boxes, ground_truth_trajectories,
                       render_views, scenario_to_text)
from .tracking import (PerceptionState, init_detector_weights, oracle_detections,
                       step_perception)

__all__ = ["PipelineModel", "FrameRecord", "RunRecord", "build_model",
           "run_pipeline", "evaluate", "save_record", "load_record",
           "record_files"]

FLOAT_FMT = "%.9g"


def _f(x) -> str:
    return FLOAT_FMT % float(x)


@dataclass
class PipelineModel:
    cfg: PipelineConfig
    grid_geom: BEVGrid
    rig: CameraRig
    ego_encoder: object
    inf_encoder: object
    fusion: FusionParams
    detector: object
    motion: object
    refs_per_view: list


def build_model(cfg: PipelineConfig) -> PipelineModel:
    cfg.validate()
    geom = BEVGrid(cfg.grid_h, cfg.grid_w, cfg.grid_resolution)
    views = tuple(
        CameraView(Pose2D(0.0, 0.0, math.radians(y)), cfg.camera_height,
                   math.radians(cfg.hfov_deg), cfg.image_width, cfg.image_height)
        for y in (0.0, 60.0, 120.0, 180.0, -120.0, -60.0))
    rig = CameraRig(views)
    seed = cfg.seed
    ego_enc = init_encoder_weights(geom, cfg.channels, seed, "ego",
                                   cfg.encoder_layers, cfg.attn_heads, cfg.attn_points)
    inf_enc = init_encoder_weights(geom, cfg.channels, seed, "inf",
                                   cfg.encoder_layers, cfg.attn_heads, cfg.attn_points)
    fusion = init_fusion_params(cfg.channels, seed, cfg.attn_heads, cfg.attn_points)
    if cfg.gate_forced:
        fusion.temporal.gate_override = cfg.gate_value
        fusion.v2x.gate_override = cfg.gate_value
    detector = init_detector_weights(cfg.channels, cfg.n_det_queries,
                                     cfg.det_layers, seed,
                                     cfg.attn_heads, cfg.attn_points)
    motion = init_motion_weights(cfg.channels, cfg.modes, cfg.horizon, seed,
                                 cfg.attn_heads, cfg.attn_points,
                                 extent=cfg.grid_h * cfg.grid_resolution)
    refs = view_references(geom, rig, (-1.0, 0.0, 1.0, 2.0),
                           ego_enc.backbone.stride)
    return PipelineModel(cfg, geom, rig, ego_enc, inf_enc, fusion, detector,
                         motion, refs)


@dataclass
class FrameRecord:
    t: int
    gt_boxes: dict
    v2x_message: bytes
    tracks: list                  # (id, gt_id, box, score, age, feature)
    motion: MotionOutput
    events_pred: list             # events predicted at this frame
    bev_energy: np.ndarray        # (H, W) L2 norm over channels


@dataclass
class RunRecord:
    scenario: Scenario
    cfg: PipelineConfig
    cfg_hash: str
    frames: list = field(default_factory=list)
    events_pred: list = field(default_factory=list)
    events_gt: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def _ego_pose_speed(scn: Scenario, t: int):
    pose = scn.ego.pose_at(t, scn.dt)
    return pose, scn.ego.speed_at(t)


def run_pipeline(scn: Scenario, cfg: PipelineConfig,
                 model: PipelineModel | None = None) -> RunRecord:
    """Run the full cooperative pipeline over one scenario."""
    model = model or build_model(cfg)
    geom = model.grid_geom
    temporal_state = TemporalState()
    perception = PerceptionState()
    record = RunRecord(scn, cfg, config_hash(cfg))
    timings = {k: 0.0 for k in
               ("render", "encode", "fuse", "perceive", "predict", "accident")}

    for t in range(scn.frames):
        try:
            tic = time.perf_counter()
            ego_pose, ego_speed = _ego_pose_speed(scn, t)
            gt = ground_truth_boxes(scn, t)
            ego_grid = BEVGrid(geom.h, geom.w, geom.resolution, ego_pose)
            inf_grid = BEVGrid(geom.h, geom.w, geom.resolution, scn.inf_pose)

            ego_imgs = render_views(scn, t, "ego", model.rig)
            inf_imgs = render_views(scn, t, "infrastructure", model.rig)
            timings["render"] += time.perf_counter() - tic

            tic = time.perf_counter()
            ego_bev = encode_bev(ego_imgs, model.rig, ego_grid, model.ego_encoder,
                                 agent_id=0, refs_per_view=model.refs_per_view)
            inf_bev = encode_bev(inf_imgs, model.rig, inf_grid, model.inf_encoder,
                                 agent_id=1, refs_per_view=model.refs_per_view)
            timings["encode"] += time.perf_counter() - tic

            tic = time.perf_counter()
            fused = temporal_fuse(ego_bev, ego_pose, temporal_state, model.fusion)
            temporal_state.update(fused, ego_pose)

            msg = encode_v2x_message(inf_bev, scn.inf_pose)
            if cfg.v2x_enabled:
                inf_rx, inf_pose_rx = decode_v2x_message(msg, inf_grid)
                aligned, mask = align_infrastructure(inf_rx, inf_pose_rx,
                                                     ego_pose, ego_grid)
                coop = v2x_fuse(fused, aligned, mask, model.fusion)
            else:
                coop = fused
            timings["fuse"] += time.perf_counter() - tic

            tic = time.perf_counter()
            override = None
            if cfg.detector == "oracle":
                others = {k: v for k, v in gt.items() if k != 0}
                override = oracle_detections(others, coop, ego_pose)
            perception = step_perception(coop, ego_pose, perception,
                                         model.detector, cfg.tau_det, cfg.r_gate,
                                         cfg.max_coast, scn.dt,
                                         detections_override=override)
            timings["perceive"] += time.perf_counter() - tic

            tic = time.perf_counter()
            motion = predict_motion(perception.tracks, perception.ego.feature,
                                    ego_pose, ego_speed, coop, model.motion,
                                    cfg.modes, cfg.horizon, scn.dt,
                                    cfg.nominal_speed)
            timings["predict"] += time.perf_counter() - tic

            tic = time.perf_counter()
            # world-frame trajectories and current boxes for the collision scan
            world_trajs = np.empty_like(motion.trajectories)
            for n in range(motion.trajectories.shape[0]):
                for kk in range(motion.trajectories.shape[1]):
                    world_trajs[n, kk] = transform_points(
                        ego_pose, motion.trajectories[n, kk])
            world_motion = MotionOutput(motion.agent_ids, world_trajs,
                                        motion.scores)
            current = {tr.id: tr.box for tr in perception.tracks}
            current[EGO_ID] = Box(ego_pose.x, ego_pose.y, scn.ego.dims[0],
                                  scn.ego.dims[1], ego_pose.yaw)
            events_t = predict_accident(world_motion, current,
                                        cfg.safety_threshold,
                                        start_timestamp=t + 1,
                                        policy=cfg.mode_policy)
            timings["accident"] += time.perf_counter() - tic

            energy = np.sqrt((coop.data ** 2).sum(axis=2))
            snap = [(tr.id, tr.gt_id, tr.box, tr.score, tr.age, tr.feature.copy())
                    for tr in perception.tracks]
            record.frames.append(FrameRecord(t, gt, msg, snap, motion,
                                             events_t, energy))
        except Exception as e:
            raise RuntimeError(f"pipeline aborted at frame {t}: {e}") from e

    # aggregate predicted events: earliest prediction per unordered pair
    agg = {}
    for fr in record.frames:
        for ev in fr.events_pred:
            key = (ev.id_a, ev.id_b)
            if key not in agg or ev.timestamp < agg[key].timestamp:
                agg[key] = ev
    record.events_pred = sorted(agg.values(),
                                key=lambda e: (e.timestamp, e.id_a, e.id_b))
    record.events_gt = detect_collisions(ground_truth_trajectories(scn),
                                         cfg.safety_threshold)
    record.timings = timings
    return record


# ---------------------------------------------------------------------------
# persistence


def _event_line(ev: CollisionEvent) -> str:
    return (f"{ev.timestamp}, {ev.id_a}, {ev.id_b}, "
            f"{ev.position[0]:.6f}, {ev.position[1]:.6f}, {ev.min_distance:.6f}")


def _parse_event(line: str) -> CollisionEvent:
    t, a, b, x, y, d = (p.strip() for p in line.split(","))
    return CollisionEvent(int(a), int(b), int(t), (float(x), float(y)), float(d))


def _box_str(b: Box) -> str:
    return " ".join(_f(v) for v in (b.x, b.y, b.length, b.width, b.yaw))


def save_record(record: RunRecord, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(record.cfg))
    (out / "scenario.txt").write_text(scenario_to_text(record.scenario))
    (out / "meta.txt").write_text(
        f"config_hash {record.cfg_hash}\nseed {record.cfg.seed}\n"
        f"frames {len(record.frames)}\n")
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    for fr in record.frames:
        lines = []
        for gid in sorted(fr.gt_boxes):
            lines.append(f"gt {gid} {_box_str(fr.gt_boxes[gid])}")
        for tid, gtid, box, sc, age, feat in fr.tracks:
            fs = " ".join(_f(v) for v in feat)
            g = -1 if gtid is None else gtid
            lines.append(f"track {tid} {g} {_box_str(box)} {_f(sc)} {age} {fs}")
        for n, aid in enumerate(fr.motion.agent_ids):
            for kk in range(fr.motion.trajectories.shape[1]):
                pts = " ".join(_f(v) for v in fr.motion.trajectories[n, kk].ravel())
                lines.append(f"motion {aid} {kk} {_f(fr.motion.scores[n, kk])} {pts}")
        for ev in fr.events_pred:
            lines.append(f"event {_event_line(ev)}")
        (frames_dir / f"frame_{fr.t:04d}.txt").write_text("\n".join(lines) + "\n")
        (frames_dir / f"frame_{fr.t:04d}_v2x.bin").write_bytes(fr.v2x_message)
        rows = "\n".join(" ".join(_f(v) for v in row) for row in fr.bev_energy)
        (frames_dir / f"frame_{fr.t:04d}_bev.txt").write_text(rows + "\n")
    (out / "events_pred.txt").write_text(
        "".join(_event_line(e) + "\n" for e in record.events_pred))
    (out / "events_gt.txt").write_text(
        "".join(_event_line(e) + "\n" for e in record.events_gt))
    # timing sidecar; excluded from determinism comparisons by design
    (out / "timings.txt").write_text(
        "".join(f"{k} {v:.6f}\n" for k, v in sorted(record.timings.items())))
    return out


def record_files(record_dir) -> list:
    """Deterministic record files (timing sidecar excluded), sorted."""
    root = Path(record_dir)
    files = [p for p in root.rglob("*") if p.is_file() and p.name != "timings.txt"]
    return sorted(files, key=lambda p: str(p.relative_to(root)))


@dataclass
class LoadedRecord:
    cfg_hash: str
    seed: int
    frame_tracks: list    # per frame: list of (track_id, gt_id)
    events_pred: list
    events_gt: list
    timings: dict


def load_record(record_dir) -> LoadedRecord:
    root = Path(record_dir)
    meta = dict(line.split(" ", 1)
                for line in (root / "meta.txt").read_text().splitlines())
    frame_tracks = []
    for path in sorted((root / "frames").glob("frame_*.txt")):
        if path.name.endswith("_bev.txt"):
            continue
        rows = []
        for line in path.read_text().splitlines():
            if line.startswith("track "):
                parts = line.split()
                rows.append((int(parts[1]), int(parts[2])))
        frame_tracks.append(rows)
    events_pred = [_parse_event(l) for l in
                   (root / "events_pred.txt").read_text().splitlines() if l.strip()]
    events_gt = [_parse_event(l) for l in
                 (root / "events_gt.txt").read_text().splitlines() if l.strip()]
    timings = {}
    tfile = root / "timings.txt"
    if tfile.exists():
        for line in tfile.read_text().splitlines():
            k, v = line.split()
            timings[k] = float(v)
    return LoadedRecord(meta["config_hash"], int(meta["seed"]), frame_tracks,
                        events_pred, events_gt, timings)


# ---------------------------------------------------------------------------
# evaluation


def count_id_switches(frame_tracks: list) -> int:
    """Number of times a ground-truth agent changes its assigned track id."""
    last = {}
    switches = 0
    for rows in frame_tracks:
        for tid, gtid in rows:
            if gtid < 0:
                continue
            if gtid in last and last[gtid] != tid:
                switches += 1
            last[gtid] = tid
    return switches


def evaluate(records: list, time_tol: int = 1, dist_tol: float = 2.0) -> dict:
    """Aggregate accident scores, ID-switch counts and runtimes.

    records: LoadedRecord or RunRecord instances (RunRecords are converted
    through their persisted form losslessly for the fields used here).
    """
    if not records:
        raise ValueError("evaluate needs at least one record")
    tp = fp = fn = 0
    time_errs, pos_errs = [], []
    switches = 0
    per_record = []
    timings = {}
    for rec in records:
        if isinstance(rec, RunRecord):
            pred, gt = rec.events_pred, rec.events_gt
            ftracks = [[(tid, -1 if g is None else g)
                        for tid, g, *_ in fr.tracks] for fr in rec.frames]
            tms = rec.timings
        else:
            pred, gt = rec.events_pred, rec.events_gt
            ftracks = rec.frame_tracks
            tms = rec.timings
        sc = score(pred, gt, time_tol, dist_tol)
        tp += sc.tp
        fp += sc.fp
        fn += sc.fn
        time_errs.extend(m[2] for m in sc.matches)
        pos_errs.extend(m[3] for m in sc.matches)
        switches += count_id_switches(ftracks)
        per_record.append({"tp": sc.tp, "fp": sc.fp, "fn": sc.fn})
        for k, v in tms.items():
            timings[k] = timings.get(k, 0.0) + v
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return {
        "records": len(records),
        "tp": tp, "fp": fp, "fn": fn,
        "precision": precision, "recall": recall,
        "mean_time_error": float(np.mean(time_errs)) if time_errs else 0.0,
        "mean_pos_error": float(np.mean(pos_errs)) if pos_errs else 0.0,
        "id_switches": switches,
        "per_record": per_record,
        "stage_runtime": timings,
    }

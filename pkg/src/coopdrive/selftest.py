"""Built-in verification suite: gradient checks against central finite
differences, alignment / assignment / collision oracles, determinism and
ego-preservation checks.  Each check mirrors one acceptance gate of the
project and reports a single pass/fail line."""

from __future__ import annotations

import itertools
import math
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .accident import Box, detect_collisions, min_distance, footprint
from .attention import deformable_attention, deformable_attention_grads, init_deform_params
from .bev import BEVFeature
from .config import PipelineConfig
from .fusion import (FusionBlockParams, FusionParams, TemporalState, init_fusion_params,
                     temporal_fuse, temporal_fuse_grads, v2x_fuse, v2x_fuse_grads)
from .geometry import BEVGrid, Pose2D
from .pipeline import count_id_switches, record_files, run_pipeline, save_record
from .scenario import (AgentScript, Scenario, Segment, generate_scenario,
                       ground_truth_boxes, ground_truth_trajectories)
from .tensor import backward, bilinear_sample, record_softmax_rows, scaled_softmax_rows
from .tracking import TrackQuery, associate

__all__ = ["run_selftest", "CheckResult", "finite_diff", "rel_err",
           "check_gradients", "check_attention_normalization",
           "check_alignment_oracles", "check_assignment_oracle",
           "check_collision_oracle", "check_template_contracts",
           "check_determinism", "check_ego_preservation",
           "brute_force_collisions", "sampled_min_distance",
           "brute_force_assignment"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


# ---------------------------------------------------------------------------
# utilities


def finite_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. every entry."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(f).max(initial=0.0), 1e-3)
    return float(np.abs(a - f).max(initial=0.0) / scale)


# ---------------------------------------------------------------------------
# 1. gradient suite


def _grad_cases_primitives(n_cases: int, tol: float):
    worst = 0.0
    for case in range(n_cases):
        rng = np.random.default_rng(1000 + case)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 5))
        g = rng.normal(size=(3, 5))
        da, db = backward("matmul", (a, b), g)
        worst = max(worst, rel_err(da, finite_diff(lambda x: float((g * (x @ b)).sum()), a.copy())))
        worst = max(worst, rel_err(db, finite_diff(lambda x: float((g * (a @ x)).sum()), b.copy())))

        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 5))
        bias = rng.normal(size=5)
        g = rng.normal(size=(3, 5))
        dx, dw, dbias = backward("linear_forward", (x, w, bias), g)
        worst = max(worst, rel_err(dx, finite_diff(
            lambda v: float((g * (v @ w + bias)).sum()), x.copy())))
        worst = max(worst, rel_err(dw, finite_diff(
            lambda v: float((g * (x @ v + bias)).sum()), w.copy())))
        worst = max(worst, rel_err(dbias, finite_diff(
            lambda v: float((g * (x @ w + v)).sum()), bias.copy())))

        x = rng.normal(size=(4, 5))
        g = rng.normal(size=(4, 5))
        scale = 0.5 + rng.random()
        (dx,) = backward("scaled_softmax_rows", (x, scale), g)
        worst = max(worst, rel_err(dx, finite_diff(
            lambda v: float((g * scaled_softmax_rows(v, scale)).sum()), x.copy())))

        feat = rng.normal(size=(5, 6, 3))
        pts = np.stack([rng.uniform(0.1, 4.9, size=7), rng.uniform(0.1, 5.9, size=7)],
                       axis=1)
        pts = np.floor(pts) + np.clip(pts - np.floor(pts), 0.05, 0.95)
        g = rng.normal(size=(7, 3))
        dfeat, dpts = backward("bilinear_sample", (feat, pts), g)
        worst = max(worst, rel_err(dfeat, finite_diff(
            lambda v: float((g * bilinear_sample(v, pts)).sum()), feat.copy())))
        worst = max(worst, rel_err(dpts, finite_diff(
            lambda v: float((g * bilinear_sample(feat, v)).sum()), pts.copy())))
        if worst > tol:
            break
    return worst


def _grad_cases_deformable(n_cases: int, tol: float):
    worst = 0.0
    c, heads, pts_n = 4, 2, 2
    for case in range(n_cases):
        rng = np.random.default_rng(2000 + case)
        params = init_deform_params(c, heads, pts_n, 3000 + case, "gc")
        params.b_offset = rng.uniform(-0.4, 0.4, size=params.b_offset.shape)
        params.w_offset = rng.uniform(-0.05, 0.05, size=params.w_offset.shape)
        query = rng.normal(size=(3, c))
        value = rng.normal(size=(6, 6, c))
        refs = np.stack([rng.uniform(1.4, 4.4, 3), rng.uniform(1.4, 4.4, 3)], axis=1)
        g = rng.normal(size=(3, c))

        dq, dv, dp = deformable_attention_grads(query, value, refs, params, g)

        def loss_q(v):
            return float((g * deformable_attention(v, value, refs, params)).sum())

        def loss_v(v):
            return float((g * deformable_attention(query, v, refs, params)).sum())

        worst = max(worst, rel_err(dq, finite_diff(loss_q, query.copy())))
        worst = max(worst, rel_err(dv, finite_diff(loss_v, value.copy())))
        for fname in ("w_offset", "w_attn", "w_value", "w_query", "w_out"):
            base = getattr(params, fname).copy()

            def loss_p(v, fname=fname):
                p2 = replace(params, **{fname: v})
                return float((g * deformable_attention(query, value, refs, p2)).sum())

            worst = max(worst, rel_err(dp[fname], finite_diff(loss_p, base)))
        if worst > tol:
            break
    return worst


def _fusion_env(case: int):
    rng = np.random.default_rng(4000 + case)
    c = 4
    grid = BEVGrid(4, 4, 1.0)
    params = init_fusion_params(c, 5000 + case, heads=2, points=2)
    for blk in (params.temporal, params.v2x):
        blk.w_gate = rng.uniform(-0.3, 0.3, size=blk.w_gate.shape)
        blk.b_gate = rng.uniform(-0.3, 0.3, size=blk.b_gate.shape)
        blk.attn.b_offset = rng.uniform(-0.3, 0.3, size=blk.attn.b_offset.shape)
    cur = rng.normal(size=(4, 4, c))
    prev = rng.normal(size=(4, 4, c))
    return rng, c, grid, params, cur, prev


def _grad_cases_fusion(n_cases: int, tol: float):
    worst = 0.0
    for case in range(n_cases):
        rng, c, grid, params, cur, prev = _fusion_env(case)
        cur_pose = Pose2D(0.3, -0.2, 0.05)
        prev_pose = Pose2D(0.0, 0.0, 0.0)
        g = rng.normal(size=(4, 4, c))

        def tfuse(cur_d, prev_d, p):
            st = TemporalState(BEVFeature(grid, prev_d), prev_pose)
            out = temporal_fuse(BEVFeature(grid, cur_d), cur_pose, st, p)
            return float((g * out.data).sum())

        st = TemporalState(BEVFeature(grid, prev), prev_pose)
        d_cur, d_prev, dp_attn, dp_gate = temporal_fuse_grads(
            BEVFeature(grid, cur), cur_pose, st, params, g)
        worst = max(worst, rel_err(d_cur, finite_diff(
            lambda v: tfuse(v, prev, params), cur.copy())))
        worst = max(worst, rel_err(d_prev, finite_diff(
            lambda v: tfuse(cur, v, params), prev.copy())))

        def tfuse_wgate(v):
            p2 = FusionParams(
                FusionBlockParams(params.temporal.attn, v, params.temporal.b_gate),
                params.v2x)
            return tfuse(cur, prev, p2)

        worst = max(worst, rel_err(dp_gate["w_gate"], finite_diff(
            tfuse_wgate, params.temporal.w_gate.copy())))

        def tfuse_woff(v):
            attn2 = replace(params.temporal.attn, w_offset=v)
            p2 = FusionParams(
                FusionBlockParams(attn2, params.temporal.w_gate, params.temporal.b_gate),
                params.v2x)
            return tfuse(cur, prev, p2)

        worst = max(worst, rel_err(dp_attn["w_offset"], finite_diff(
            tfuse_woff, params.temporal.attn.w_offset.copy())))

        # v2x block with a mixed validity mask
        mask = (rng.random((4, 4)) > 0.3).astype(np.float64)
        inf = rng.normal(size=(4, 4, c))

        def vfuse(ego_d, inf_d, p):
            out = v2x_fuse(BEVFeature(grid, ego_d), BEVFeature(grid, inf_d), mask, p)
            return float((g * out.data).sum())

        d_ego, d_inf, vp_attn, vp_gate = v2x_fuse_grads(
            BEVFeature(grid, cur), BEVFeature(grid, inf), mask, params, g)
        worst = max(worst, rel_err(d_ego, finite_diff(
            lambda v: vfuse(v, inf, params), cur.copy())))
        worst = max(worst, rel_err(d_inf, finite_diff(
            lambda v: vfuse(cur, v, params), inf.copy())))

        def vfuse_wgate(v):
            p2 = FusionParams(
                params.temporal,
                FusionBlockParams(params.v2x.attn, v, params.v2x.b_gate))
            return vfuse(cur, inf, p2)

        worst = max(worst, rel_err(vp_gate["w_gate"], finite_diff(
            vfuse_wgate, params.v2x.w_gate.copy())))
        if worst > tol:
            break
    return worst


def check_gradients(n_cases: int = 25, tol: float = 1e-4) -> CheckResult:
    tic = time.perf_counter()
    worst = max(_grad_cases_primitives(n_cases, tol),
                _grad_cases_deformable(n_cases, tol),
                _grad_cases_fusion(n_cases, tol))
    took = time.perf_counter() - tic
    ok = worst <= tol and took < 60.0
    return CheckResult("gradient suite",
                       ok, f"max rel err {worst:.3e}, {took:.1f}s")


# ---------------------------------------------------------------------------
# 2. attention normalization


def check_attention_normalization(frames: int = 4) -> CheckResult:
    scn = generate_scenario(7, "crossing", frames=max(frames, 4))
    cfg = PipelineConfig(seed=7, detector="oracle")
    with record_softmax_rows() as sums:
        run_pipeline(scn, cfg)
    sums = np.asarray(sums)
    worst = float(np.abs(sums - 1.0).max(initial=0.0))
    return CheckResult("attention normalization", worst <= 1e-9,
                       f"{sums.size} softmax rows, worst |sum-1| {worst:.2e}")


# ---------------------------------------------------------------------------
# 3. alignment oracles


def check_alignment_oracles() -> CheckResult:
    from .geometry import warp_grid
    rng = np.random.default_rng(11)
    grid = BEVGrid(10, 12, 1.0)
    feat = rng.normal(size=(10, 12, 3))
    probs = []

    # one-cell translation along the grid x axis
    shifted, _ = warp_grid(feat, grid, Pose2D(1.0, 0.0, 0.0))
    oracle = np.zeros_like(feat)
    oracle[1:, :, :] = feat[:-1, :, :]
    probs.append(("integer shift", float(np.abs(shifted - oracle).max())))

    # pi rotation about the center equals index reversal
    rot, _ = warp_grid(feat, grid, Pose2D(0.0, 0.0, math.pi))
    probs.append(("pi rotation", float(np.abs(rot - feat[::-1, ::-1, :]).max())))

    # temporal fusion is the identity at t=0
    bev = BEVFeature(grid, feat)
    params = init_fusion_params(3, 3, heads=1, points=1)
    out = temporal_fuse(bev, Pose2D(), TemporalState(), params)
    probs.append(("t=0 identity", float(np.abs(out.data - feat).max())))

    shift_exact = probs[0][1] == 0.0
    rot_ok = probs[1][1] <= 1e-9
    ident_ok = probs[2][1] == 0.0
    detail = ", ".join(f"{n}: {v:.2e}" for n, v in probs)
    return CheckResult("alignment oracles", shift_exact and rot_ok and ident_ok, detail)


# ---------------------------------------------------------------------------
# 4. assignment oracle


def brute_force_assignment(cost: np.ndarray, gate: float):
    """Exhaustive min-cost one-to-one matching with gating.

    Gated-out pairs may not be matched; among feasible matchings the one
    with the most pairs wins, ties broken by total distance.
    """
    nt, nd = cost.shape
    for k in range(min(nt, nd), -1, -1):
        best_k = None
        for tr_sel in itertools.combinations(range(nt), k):
            for de_sel in itertools.permutations(range(nd), k):
                total = 0.0
                ok = True
                for i, j in zip(tr_sel, de_sel):
                    if cost[i, j] > gate:
                        ok = False
                        break
                    total += cost[i, j]
                if ok and (best_k is None or total < best_k[0] - 1e-12):
                    best_k = (total, frozenset(zip(tr_sel, de_sel)))
        if best_k is not None:
            return best_k[1]
    return frozenset()


def _random_assignment_instance(case: int):
    rng = np.random.default_rng(6000 + case)
    nt = rng.integers(0, 7)
    nd = rng.integers(0, 7)
    tracks = [TrackQuery(i, np.zeros(4),
                         Box(float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10)),
                             4.0, 2.0, 0.0))
              for i in range(nt)]
    from .tracking import Detection
    dets = [Detection(Box(float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10)),
                          4.0, 2.0, 0.0), 1.0, np.zeros(4))
            for _ in range(nd)]
    return tracks, dets


def check_assignment_oracle(n_cases: int = 500) -> CheckResult:
    gate = 4.0
    mismatches = 0
    for case in range(n_cases):
        tracks, dets = _random_assignment_instance(case)
        got, _ = associate([replace_track(t) for t in tracks], dets, gate, 99, 1000,
                           np.zeros((8, 4)))
        got_pairs = set()
        for tr in got:
            if tr.id < 1000 and tr.age == 1 and tr.coast == 0 and tr.score == 1.0:
                j = next(i for i, d in enumerate(dets)
                         if (d.box.x, d.box.y) == (tr.box.x, tr.box.y))
                got_pairs.add((tr.id, j))
        cost = np.array([[math.hypot(t.box.x - d.box.x, t.box.y - d.box.y)
                          for d in dets] for t in tracks]).reshape(len(tracks), len(dets))
        want = brute_force_assignment(cost, gate)
        want_pairs = {(i, j) for i, j in want}
        if got_pairs != want_pairs:
            # equal-cost ties are acceptable; compare totals and cardinality
            if len(got_pairs) != len(want_pairs) or abs(
                    sum(cost[i, j] for i, j in got_pairs)
                    - sum(cost[i, j] for i, j in want_pairs)) > 1e-9:
                mismatches += 1

    # oracle-fed tracking over all templates: zero ID switches
    switches = 0
    for template in ("crossing", "following", "merging", "benign"):
        scn = generate_scenario(3, template, frames=8)
        cfg = PipelineConfig(seed=3, detector="oracle")
        rec = run_pipeline(scn, cfg)
        ftracks = [[(tid, -1 if g is None else g) for tid, g, *_ in fr.tracks]
                   for fr in rec.frames]
        switches += count_id_switches(ftracks)
    ok = mismatches == 0 and switches == 0
    return CheckResult("assignment oracle", ok,
                       f"{mismatches} mismatches / {n_cases}, {switches} ID switches")


def replace_track(t: TrackQuery) -> TrackQuery:
    return TrackQuery(t.id, t.feature.copy(), t.box, t.age, t.score, t.coast,
                      t.velocity.copy(), t.gt_id)


# ---------------------------------------------------------------------------
# 5. collision oracle


def brute_force_collisions(trajs: dict, threshold: float) -> list:
    """Naive all-pairs, all-frames scan; first offending frame per pair."""
    ids = sorted(trajs)
    out = []
    for a_i in range(len(ids)):
        for b_i in range(a_i + 1, len(ids)):
            a, b = ids[a_i], ids[b_i]
            for t in range(len(trajs[a])):
                d = min_distance(footprint(trajs[a][t]), footprint(trajs[b][t]))
                if d < threshold:
                    out.append((a, b, t))
                    break
    return sorted(out, key=lambda e: (e[2], e[0], e[1]))


def sampled_min_distance(box_a: Box, box_b: Box, spacing: float = 2e-3) -> float:
    """Point-sampling distance oracle: dense boundary samples of A against
    the exact point-to-rectangle distance of B (and symmetrically)."""
    def boundary(box):
        v = footprint(box).vertices
        pts = []
        for i in range(4):
            a, b = v[i], v[(i + 1) % 4]
            n = max(2, int(math.ceil(np.linalg.norm(b - a) / spacing)))
            ts = np.linspace(0.0, 1.0, n, endpoint=False)
            pts.append(a[None, :] + ts[:, None] * (b - a)[None, :])
        return np.vstack(pts)

    def point_to_rect(pts, box):
        # distance from points to a solid oriented rectangle (0 inside)
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        rel = pts - np.array([box.x, box.y])
        lx = rel[:, 0] * c + rel[:, 1] * s
        ly = -rel[:, 0] * s + rel[:, 1] * c
        dx = np.maximum(np.abs(lx) - box.length / 2.0, 0.0)
        dy = np.maximum(np.abs(ly) - box.width / 2.0, 0.0)
        return np.sqrt(dx * dx + dy * dy)

    d1 = point_to_rect(boundary(box_a), box_b).min()
    d2 = point_to_rect(boundary(box_b), box_a).min()
    return float(min(d1, d2))


def _random_box(rng, span=8.0) -> Box:
    return Box(float(rng.uniform(-span, span)), float(rng.uniform(-span, span)),
               float(rng.uniform(1.0, 5.0)), float(rng.uniform(0.8, 2.5)),
               float(rng.uniform(-math.pi, math.pi)))


def check_collision_oracle(n_scenes: int = 200, n_pairs: int = 1000) -> CheckResult:
    scan_bad = 0
    for case in range(n_scenes):
        rng = np.random.default_rng(7000 + case)
        n_agents = int(rng.integers(2, 6))
        n_frames = int(rng.integers(2, 21))
        trajs = {}
        for a in range(n_agents):
            boxes = []
            x, y = rng.uniform(-10, 10, size=2)
            yaw = rng.uniform(-math.pi, math.pi)
            dims = (float(rng.uniform(1.5, 5.0)), float(rng.uniform(1.0, 2.5)))
            v = rng.uniform(0.0, 2.0)
            for _t in range(n_frames):
                boxes.append(Box(float(x), float(y), dims[0], dims[1], float(yaw)))
                x += v * math.cos(yaw)
                y += v * math.sin(yaw)
                yaw += rng.uniform(-0.2, 0.2)
            trajs[a] = boxes
        threshold = float(rng.uniform(0.2, 1.5))
        got = [(e.id_a, e.id_b, e.timestamp)
               for e in detect_collisions(trajs, threshold)]
        want = brute_force_collisions(trajs, threshold)
        if sorted(got) != sorted(want):
            scan_bad += 1

    dist_worst = 0.0
    for case in range(n_pairs):
        rng = np.random.default_rng(8000 + case)
        a, b = _random_box(rng), _random_box(rng)
        exact = min_distance(footprint(a), footprint(b))
        approx = sampled_min_distance(a, b)
        dist_worst = max(dist_worst, abs(exact - approx))
    ok = scan_bad == 0 and dist_worst <= 1e-3
    return CheckResult("collision oracle", ok,
                       f"{scan_bad} scan mismatches / {n_scenes}, "
                       f"distance worst err {dist_worst:.2e}")


# ---------------------------------------------------------------------------
# 6. template contracts and the anchor-scan oracle


def _anchor_scan_oracle(scn: Scenario, frame: int, cfg: PipelineConfig):
    """Independent straight-line rollout of every agent's ground-truth state
    at `frame`, scanned for first-contact events."""
    dt = scn.dt
    gt_now = ground_truth_boxes(scn, frame)
    gt_prev = ground_truth_boxes(scn, frame - 1) if frame > 0 else gt_now
    trajs = {}
    for aid, box in gt_now.items():
        if frame == 0 and aid != 0:
            speed = 0.0   # tracks spawn with zero velocity
        elif aid == 0:
            speed = scn.ego.speed_at(frame)
        else:
            p0, p1 = gt_prev[aid], box
            speed = math.hypot(p1.x - p0.x, p1.y - p0.y) / dt
        boxes = []
        x, y, yaw = box.x, box.y, box.yaw
        for _s in range(cfg.horizon):
            x += speed * dt * math.cos(yaw)
            y += speed * dt * math.sin(yaw)
            boxes.append(Box(x, y, box.length, box.width, yaw))
        key = aid if aid != 0 else -1
        trajs[key] = boxes
    events = detect_collisions(trajs, cfg.safety_threshold,
                               start_timestamp=frame + 1)
    return [(e.id_a, e.id_b, e.timestamp) for e in events]


def check_template_contracts() -> CheckResult:
    details = []
    ok = True
    for template, expect in (("crossing", 1), ("merging", 1),
                             ("following", 0), ("benign", 0)):
        scn = generate_scenario(5, template)
        n = len(detect_collisions(ground_truth_trajectories(scn), 0.5))
        ok &= n == expect
        details.append(f"{template}: {n} gt events")

    # zero-init decoders: predicted events equal the anchor-scan oracle
    scn = generate_scenario(5, "crossing", frames=8)
    cfg = PipelineConfig(seed=5, detector="oracle")
    rec = run_pipeline(scn, cfg)
    frame = 3
    got = [(e.id_a, e.id_b, e.timestamp)
           for e in rec.frames[frame].events_pred]
    want = _anchor_scan_oracle(scn, frame, cfg)
    # oracle track ids equal ground-truth ids in oracle-fed mode, offset by
    # spawn order; map through the recorded gt ids
    id_map = {tid: (g if g >= 0 else tid)
              for tid, g, *_ in rec.frames[frame].tracks}
    id_map[-1] = -1
    got_mapped = sorted((min(id_map.get(a, a), id_map.get(b, b)),
                         max(id_map.get(a, a), id_map.get(b, b)), t)
                        for a, b, t in got)
    ok &= got_mapped == sorted(want)
    details.append(f"anchor-scan: got {got_mapped} want {sorted(want)}")
    return CheckResult("template contracts", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 7. determinism


def check_determinism(frames: int = 4, thread_check: bool = True) -> CheckResult:
    scn = generate_scenario(9, "crossing", frames=frames)
    cfg = PipelineConfig(seed=9, detector="oracle")
    with tempfile.TemporaryDirectory() as tmp:
        d1, d2 = Path(tmp) / "a", Path(tmp) / "b"
        save_record(run_pipeline(scn, cfg), d1)
        save_record(run_pipeline(scn, cfg), d2)
        same = _dirs_equal(d1, d2)
        thread_same = True
        if thread_check:
            outs = []
            for nthreads in ("1", "4"):
                env = dict(os.environ, OMP_NUM_THREADS=nthreads,
                           OPENBLAS_NUM_THREADS=nthreads,
                           MKL_NUM_THREADS=nthreads)
                dest = Path(tmp) / f"t{nthreads}"
                code = (
                    "from coopdrive.selftest import _thread_probe;"
                    f"_thread_probe({frames!r}, {str(dest)!r})")
                subprocess.run([sys.executable, "-c", code], check=True, env=env)
                outs.append(dest)
            thread_same = _dirs_equal(outs[0], outs[1])
    ok = same and thread_same
    return CheckResult("determinism", ok,
                       f"rerun identical: {same}, thread-count identical: {thread_same}")


def _thread_probe(frames: int, dest: str):
    scn = generate_scenario(9, "crossing", frames=frames)
    cfg = PipelineConfig(seed=9, detector="oracle")
    save_record(run_pipeline(scn, cfg), dest)


def _dirs_equal(a: Path, b: Path) -> bool:
    fa, fb = record_files(a), record_files(b)
    ra = [p.relative_to(a) for p in fa]
    rb = [p.relative_to(b) for p in fb]
    if ra != rb:
        return False
    return all(x.read_bytes() == y.read_bytes() for x, y in zip(fa, fb))


# ---------------------------------------------------------------------------
# 8. ego preservation and V2X benefit


def _occlusion_scenario() -> Scenario:
    dims = (4.0, 2.0)
    ego = AgentScript(0, Pose2D(-10.0, 0.0, 0.0), dims, (Segment(2, 0.0),))
    front = AgentScript(1, Pose2D(-4.0, 0.0, 0.0), dims, (Segment(2, 0.0),))
    hidden = AgentScript(2, Pose2D(4.0, 0.0, 0.0), dims, (Segment(2, 0.0),))
    return Scenario(21, "benign", 2, 0.5, ego, (front, hidden),
                    Pose2D(4.0, 10.0, -math.pi / 2), False)


def check_ego_preservation() -> CheckResult:
    rng = np.random.default_rng(31)
    grid = BEVGrid(8, 8, 1.0)
    ego = BEVFeature(grid, rng.normal(size=(8, 8, 4)))
    inf = BEVFeature(grid, rng.normal(size=(8, 8, 4)))
    params = init_fusion_params(4, 31, heads=2, points=2)
    params.v2x.gate_override = 1.0
    out = v2x_fuse(ego, inf, np.zeros((8, 8)), params)
    zero_mask_ok = np.array_equal(out.data, ego.data)

    scn = _occlusion_scenario()
    cfg_off = PipelineConfig(seed=21, detector="oracle", v2x_enabled=False)
    cfg_on = PipelineConfig(seed=21, detector="oracle", v2x_enabled=True,
                            gate_forced=True, gate_value=1.0)
    rec_off = run_pipeline(scn, cfg_off)
    rec_on = run_pipeline(scn, cfg_on)
    # energy around the occluded agent's cells in the ego grid at t=0
    ego_pose = scn.ego.pose_at(0, scn.dt)
    target = scn.agents[1].pose_at(0, scn.dt)
    gi = int(round((target.x - ego_pose.x) / cfg_on.grid_resolution
                   + (cfg_on.grid_h - 1) / 2.0))
    gj = int(round((target.y - ego_pose.y) / cfg_on.grid_resolution
                   + (cfg_on.grid_w - 1) / 2.0))
    sl = (slice(gi - 1, gi + 2), slice(gj - 1, gj + 2))
    e_off = float(rec_off.frames[0].bev_energy[sl].sum())
    e_on = float(rec_on.frames[0].bev_energy[sl].sum())
    gain_ok = e_on > e_off
    ok = zero_mask_ok and gain_ok
    return CheckResult("ego preservation",
                       ok, f"zero-mask bitwise: {zero_mask_ok}, "
                           f"occluded-cell energy {e_off:.3f} -> {e_on:.3f}")


# ---------------------------------------------------------------------------
# runner


def run_selftest(fast: bool = False, thread_check: bool = True) -> list:
    n_grad = 5 if fast else 25
    n_assign = 60 if fast else 500
    n_scenes = 30 if fast else 200
    n_pairs = 100 if fast else 1000
    tic = time.perf_counter()
    checks = [
        check_gradients(n_grad),
        check_attention_normalization(),
        check_alignment_oracles(),
        check_assignment_oracle(n_assign),
        check_collision_oracle(n_scenes, n_pairs),
        check_template_contracts(),
        check_determinism(thread_check=thread_check),
        check_ego_preservation(),
    ]
    took = time.perf_counter() - tic
    checks.append(CheckResult("selftest runtime", took < 600.0, f"{took:.1f}s"))
    return checks

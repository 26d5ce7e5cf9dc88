import dataclasses

import numpy as np
import pytest

from coopdrive.config import PipelineConfig
from coopdrive.pipeline import (RunRecord, build_model, count_id_switches,
                                evaluate, load_record, record_files,
                                run_pipeline, save_record)
from coopdrive.scenario import generate_scenario


@pytest.fixture(scope="module")
def crossing_record(small_cfg_module):
    scn = generate_scenario(0, "crossing", frames=6)
    return scn, run_pipeline(scn, small_cfg_module)


@pytest.fixture(scope="module")
def small_cfg_module():
    return PipelineConfig(grid_h=20, grid_w=20, channels=8,
                          image_width=32, image_height=24,
                          encoder_layers=2, n_det_queries=6, det_layers=2,
                          modes=2, horizon=4, seed=0, detector="oracle")


# ---------------------------------------------------------------------------
# running


def test_run_produces_one_record_per_frame(crossing_record):
    scn, rec = crossing_record
    assert isinstance(rec, RunRecord)
    assert [fr.t for fr in rec.frames] == list(range(scn.frames))
    for fr in rec.frames:
        assert sorted(fr.gt_boxes) == [0, 1, 2]
        assert fr.bev_energy.shape == (20, 20)
        assert len(fr.v2x_message) > 8 + 24
    assert rec.timings and all(v >= 0.0 for v in rec.timings.values())


def test_run_oracle_detector_tracks_all_non_ego(crossing_record):
    scn, rec = crossing_record
    for fr in rec.frames:
        assert sorted(gt for _tid, gt, *_ in fr.tracks) == [1, 2]


def test_run_crossing_ground_truth_has_one_event(crossing_record):
    _scn, rec = crossing_record
    assert len(rec.events_gt) == 1
    assert (rec.events_gt[0].id_a, rec.events_gt[0].id_b) == (0, 1)


def test_run_motion_covers_tracks_and_ego(crossing_record):
    _scn, rec = crossing_record
    fr = rec.frames[-1]
    assert fr.motion.agent_ids[-1] == -1
    assert fr.motion.trajectories.shape == (len(fr.tracks) + 1, 2, 4, 2)


def test_run_rerun_identical(small_cfg_module, tmp_path):
    scn = generate_scenario(1, "following", frames=4)
    a = save_record(run_pipeline(scn, small_cfg_module), tmp_path / "a")
    b = save_record(run_pipeline(scn, small_cfg_module), tmp_path / "b")
    fa, fb = record_files(a), record_files(b)
    assert [p.relative_to(a) for p in fa] == [p.relative_to(b) for p in fb]
    for pa, pb in zip(fa, fb):
        assert pa.read_bytes() == pb.read_bytes()


def test_run_v2x_off_changes_nothing_with_remote_infrastructure(tmp_path):
    # the infrastructure unit parked far outside the grid contributes an
    # all-zero validity mask, so disabling V2X must not change a byte
    scn = generate_scenario(2, "benign", frames=3)
    scn = dataclasses.replace(scn, inf_pose=dataclasses.replace(scn.inf_pose,
                                                                x=500.0, y=500.0))
    base = dict(grid_h=16, grid_w=16, channels=8, image_width=32,
                image_height=24, encoder_layers=2, n_det_queries=4,
                det_layers=2, modes=2, horizon=3, detector="oracle")
    on = save_record(run_pipeline(scn, PipelineConfig(v2x_enabled=True, **base)),
                     tmp_path / "on")
    off = save_record(run_pipeline(scn, PipelineConfig(v2x_enabled=False, **base)),
                      tmp_path / "off")
    skip = {"config.txt", "meta.txt"}   # the flag and its hash are recorded
    for pa, pb in zip(record_files(on), record_files(off)):
        if pa.name in skip:
            continue
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_run_wraps_frame_failures(small_cfg_module):
    scn = generate_scenario(0, "benign", frames=3)
    bad = dataclasses.replace(small_cfg_module, modes=7)   # exceeds anchors
    with pytest.raises(RuntimeError, match="frame 0"):
        run_pipeline(scn, bad)


def test_build_model_rejects_invalid_config():
    from coopdrive.config import ConfigError
    with pytest.raises(ConfigError):
        build_model(PipelineConfig(detector="magic"))


# ---------------------------------------------------------------------------
# persistence


def test_save_load_round_trip(crossing_record, tmp_path):
    _scn, rec = crossing_record
    out = save_record(rec, tmp_path / "rec")
    loaded = load_record(out)
    assert loaded.cfg_hash == rec.cfg_hash
    assert loaded.seed == rec.cfg.seed
    assert len(loaded.frame_tracks) == len(rec.frames)
    for rows, fr in zip(loaded.frame_tracks, rec.frames):
        assert rows == [(tid, -1 if g is None else g)
                        for tid, g, *_ in fr.tracks]
    # event positions are persisted at micrometer precision
    for got, want in zip(loaded.events_gt + loaded.events_pred,
                         rec.events_gt + rec.events_pred):
        assert (got.id_a, got.id_b, got.timestamp) \
            == (want.id_a, want.id_b, want.timestamp)
        assert got.position == pytest.approx(want.position, abs=1e-6)
        assert got.min_distance == pytest.approx(want.min_distance, abs=1e-6)
    assert len(loaded.events_gt) == len(rec.events_gt)
    assert len(loaded.events_pred) == len(rec.events_pred)
    assert set(loaded.timings) == set(rec.timings)


def test_record_layout(crossing_record, tmp_path):
    scn, rec = crossing_record
    out = save_record(rec, tmp_path / "rec")
    names = {p.name for p in out.iterdir()}
    assert {"config.txt", "scenario.txt", "meta.txt", "events_pred.txt",
            "events_gt.txt", "timings.txt", "frames"} <= names
    frames = sorted(p.name for p in (out / "frames").iterdir())
    assert f"frame_{scn.frames - 1:04d}.txt" in frames
    assert f"frame_0000_v2x.bin" in frames
    assert f"frame_0000_bev.txt" in frames
    assert len(frames) == 3 * scn.frames


def test_record_files_excludes_timing_sidecar(crossing_record, tmp_path):
    _scn, rec = crossing_record
    out = save_record(rec, tmp_path / "rec")
    files = record_files(out)
    assert all(p.name != "timings.txt" for p in files)
    assert (out / "timings.txt").exists()


# ---------------------------------------------------------------------------
# evaluation


def test_count_id_switches():
    assert count_id_switches([[(0, 1)], [(0, 1)], [(0, 1)]]) == 0
    assert count_id_switches([[(0, 1)], [(2, 1)]]) == 1
    assert count_id_switches([[(0, 1)], [(2, 1)], [(2, 1)], [(0, 1)]]) == 2
    assert count_id_switches([[(0, -1)], [(5, -1)]]) == 0   # unlabeled tracks
    assert count_id_switches([]) == 0


def test_evaluate_perfect_predictions(crossing_record):
    _scn, rec = crossing_record
    ideal = RunRecord(rec.scenario, rec.cfg, rec.cfg_hash, rec.frames,
                      list(rec.events_gt), list(rec.events_gt), rec.timings)
    report = evaluate([ideal])
    assert report["tp"] == 1 and report["fp"] == 0 and report["fn"] == 0
    assert report["precision"] == 1.0 and report["recall"] == 1.0
    assert report["mean_time_error"] == 0.0 and report["mean_pos_error"] == 0.0
    assert report["id_switches"] == 0


def test_evaluate_aggregates_over_records(crossing_record, tmp_path):
    _scn, rec = crossing_record
    loaded = load_record(save_record(rec, tmp_path / "rec"))
    report = evaluate([rec, loaded])
    assert report["records"] == 2
    assert report["tp"] + report["fp"] == 2 * len(rec.events_pred)
    assert report["tp"] + report["fn"] == 2 * len(rec.events_gt)
    assert sum(r["tp"] for r in report["per_record"]) == report["tp"]
    assert report["stage_runtime"]["encode"] >= rec.timings["encode"]


def test_evaluate_requires_records():
    with pytest.raises(ValueError):
        evaluate([])

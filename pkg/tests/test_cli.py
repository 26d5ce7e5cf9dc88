import pytest

from coopdrive.cli import main
from coopdrive.config import PipelineConfig, config_to_text
from coopdrive.scenario import scenario_from_text


@pytest.fixture
def small_config_file(tmp_path):
    cfg = PipelineConfig(grid_h=16, grid_w=16, channels=8, image_width=32,
                         image_height=24, encoder_layers=2, n_det_queries=4,
                         det_layers=2, modes=2, horizon=3, detector="oracle")
    path = tmp_path / "cfg.txt"
    path.write_text(config_to_text(cfg))
    return path


def run_record(tmp_path, small_config_file, template="benign", name="rec"):
    out = tmp_path / name
    rc = main(["run", "--template", template, "--seed", "1",
               "--config", str(small_config_file), "--out", str(out)])
    assert rc == 0
    return out


# ---------------------------------------------------------------------------
# generate


def test_generate_writes_parseable_scenario(tmp_path, capsys):
    out = tmp_path / "scn.txt"
    assert main(["generate", "--template", "crossing", "--seed", "3",
                 "--out", str(out)]) == 0
    scn = scenario_from_text(out.read_text())
    assert scn.template == "crossing" and scn.seed == 3
    assert str(out) in capsys.readouterr().out


def test_generate_unknown_template_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["generate", "--template", "junction", "--out", str(tmp_path / "s")])
    assert e.value.code == 2


# ---------------------------------------------------------------------------
# run


def test_run_from_scenario_file(tmp_path, small_config_file, capsys):
    scn_file = tmp_path / "scn.txt"
    main(["generate", "--template", "benign", "--seed", "2", "--out", str(scn_file)])
    out = tmp_path / "rec"
    assert main(["run", str(scn_file), "--config", str(small_config_file),
                 "--out", str(out)]) == 0
    assert (out / "meta.txt").exists()
    assert "frames" in capsys.readouterr().out


def test_run_from_template(tmp_path, small_config_file):
    out = run_record(tmp_path, small_config_file, template="crossing")
    assert (out / "events_gt.txt").read_text().strip() != ""


def test_run_without_scenario_or_template_config_error(tmp_path, capsys):
    rc = main(["run", "--out", str(tmp_path / "rec")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_run_bad_config_file_config_error(tmp_path, capsys):
    bad = tmp_path / "cfg.txt"
    bad.write_text("[tracking]\ndetector = magic\n")
    rc = main(["run", "--template", "benign", "--config", str(bad),
               "--out", str(tmp_path / "rec")])
    assert rc == 2


def test_run_missing_scenario_file_runtime_error(tmp_path, capsys):
    rc = main(["run", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "rec")])
    assert rc == 3
    assert "error" in capsys.readouterr().err


def test_run_v2x_and_threshold_flags_recorded(tmp_path, small_config_file):
    out = tmp_path / "rec"
    assert main(["run", "--template", "benign", "--seed", "1",
                 "--config", str(small_config_file), "--out", str(out),
                 "--v2x", "off", "--threshold", "0.25"]) == 0
    text = (out / "config.txt").read_text()
    assert "v2x_enabled = off" in text
    assert "safety_threshold = 0.25" in text


# ---------------------------------------------------------------------------
# eval / plot


def test_eval_prints_report(tmp_path, small_config_file, capsys):
    a = run_record(tmp_path, small_config_file, "crossing", "a")
    b = run_record(tmp_path, small_config_file, "benign", "b")
    assert main(["eval", str(a), str(b)]) == 0
    out = capsys.readouterr().out
    assert "records 2" in out
    assert "precision" in out and "recall" in out
    assert "id_switches 0" in out
    assert "runtime_encode" in out


def test_eval_missing_record_runtime_error(tmp_path):
    assert main(["eval", str(tmp_path / "nothing")]) == 3


def test_plot_emits_svgs(tmp_path, small_config_file, capsys):
    rec = run_record(tmp_path, small_config_file, "benign", "rec")
    out = tmp_path / "plots"
    assert main(["plot", str(rec), "--out", str(out)]) == 0
    assert len(list(out.glob("*.svg"))) > 0


def test_plot_unwritable_out_runtime_error(tmp_path, small_config_file):
    rec = run_record(tmp_path, small_config_file, "benign", "rec2")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["plot", str(rec), "--out", str(blocker / "sub")]) == 3


# ---------------------------------------------------------------------------
# selftest (fast variant only; the full suite runs in the acceptance tests)


def test_selftest_fast_passes(capsys):
    assert main(["selftest", "--fast", "--no-thread-check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "checks passed" in out

"""Command-line front end: scenario generation, pipeline runs, evaluation,
plotting and the built-in verification suite.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig, config_from_text
from .pipeline import evaluate, load_record, run_pipeline, save_record
from .plots import emit_plots
from .scenario import TEMPLATES, generate_scenario, scenario_from_text, scenario_to_text
from .selftest import run_selftest

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopdrive",
        description="cooperative driving pipeline: generate / run / eval / "
                    "plot / selftest")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_gen = sub.add_parser("generate", help="write a scenario file")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--template", choices=TEMPLATES, required=True)
    p_gen.add_argument("--out", required=True, help="scenario file to write")
    p_gen.add_argument("--threshold", type=float, default=0.5,
                       help="safety threshold used for the template contract")

    p_run = sub.add_parser("run", help="run the pipeline on a scenario")
    p_run.add_argument("scenario", nargs="?",
                       help="scenario file; omit to generate from --template")
    p_run.add_argument("--template", choices=TEMPLATES)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--config", help="pipeline config file")
    p_run.add_argument("--out", required=True, help="record directory to write")
    p_run.add_argument("--v2x", choices=("on", "off"))
    p_run.add_argument("--threshold", type=float,
                       help="override the safety threshold")

    p_eval = sub.add_parser("eval", help="aggregate metrics over records")
    p_eval.add_argument("records", nargs="+", help="record directories")
    p_eval.add_argument("--config", help="config file for matching tolerances")

    p_plot = sub.add_parser("plot", help="emit SVG plots for a record")
    p_plot.add_argument("record", help="record directory")
    p_plot.add_argument("--out", required=True, help="output directory")

    p_self = sub.add_parser("selftest", help="run the verification suite")
    p_self.add_argument("--fast", action="store_true",
                        help="reduced case counts for a quick smoke run")
    p_self.add_argument("--no-thread-check", action="store_true",
                        help="skip the subprocess thread-count comparison")
    return parser


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = config_from_text(Path(args.config).read_text())
    else:
        cfg = PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "v2x", None) is not None:
        cfg.v2x_enabled = args.v2x == "on"
    if getattr(args, "threshold", None) is not None:
        cfg.safety_threshold = args.threshold
    return cfg.validate()


def _cmd_generate(args) -> int:
    scn = generate_scenario(args.seed, args.template, threshold=args.threshold)
    Path(args.out).write_text(scenario_to_text(scn))
    print(f"wrote {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.scenario:
        scn = scenario_from_text(Path(args.scenario).read_text())
    elif args.template:
        scn = generate_scenario(cfg.seed, args.template,
                                threshold=cfg.safety_threshold)
    else:
        raise ConfigError("run needs a scenario file or --template")
    record = run_pipeline(scn, cfg)
    save_record(record, args.out)
    print(f"wrote {args.out}: {len(record.frames)} frames, "
          f"{len(record.events_pred)} predicted / "
          f"{len(record.events_gt)} ground-truth events")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    records = [load_record(d) for d in args.records]
    report = evaluate(records, cfg.time_tol, cfg.dist_tol)
    for key in ("records", "tp", "fp", "fn", "precision", "recall",
                "mean_time_error", "mean_pos_error", "id_switches"):
        print(f"{key} {report[key]}")
    for stage, secs in sorted(report["stage_runtime"].items()):
        print(f"runtime_{stage} {secs:.3f}")
    return 0


def _cmd_plot(args) -> int:
    written = emit_plots(args.record, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def _cmd_selftest(args) -> int:
    results = run_selftest(fast=args.fast,
                           thread_check=not args.no_thread_check)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 3


_COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "eval": _cmd_eval,
    "plot": _cmd_plot,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - single CLI failure funnel
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

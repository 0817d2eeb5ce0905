"""Command-line front end: simulate -> detect -> align -> fuse -> evaluate.

Subcommands compose through the filesystem only.  Exit codes: 0 success,
1 usage, 2 data/IO, 3 numeric failure (non-convergence under --strict).
The RESILIENT_FUSION_LOG environment variable sets the log level;
--verbose forces DEBUG.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .degeneracy import DetectorConfig, flagged_intervals, write_health_csv
from .errors import DataError, NumericError
from .evaluation import evaluate_trajectories, write_errors_csv
from .formats import read_json, read_tum, write_json
from .frame_align import (
    AlignmentWindow,
    RobustKernel,
    SolverOptions,
    alignment_to_json,
    pair_poses,
    solve_alignment,
)
from .simulator import SCENARIOS, make_scenario, write_scenario
from .supervisor import RunConfig, detect_health, run_config_from_dict, run_offline

log = logging.getLogger("resilient_fusion")


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _setup_logging(verbose: bool):
    level_name = os.environ.get("RESILIENT_FUSION_LOG", "WARNING").upper()
    level = logging.DEBUG if verbose else getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_run_config(path, seed=None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        cfg = run_config_from_dict(read_json(path))
    if seed is not None:
        cfg = RunConfig(**{**cfg.__dict__, "seed": seed})
    return cfg


def build_parser() -> _Parser:
    parser = _Parser(prog="resilient-fusion", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    # global defaults; a subcommand's own flag takes precedence
    parser.add_argument("--config", dest="global_config", default=None, help="run-config JSON")
    parser.add_argument("--seed", dest="global_seed", type=int, default=None, help="RNG seed")
    parser.add_argument("--out", dest="global_out", default=None, help="output path")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic scenario directory")
    p_sim.add_argument("--scenario", default=None, help="built-in scenario name")
    p_sim.add_argument("--config", default=None, help="scenario config JSON (alternative to --scenario)")
    p_sim.add_argument("--seed", type=int, default=None, help="RNG seed (default: scenario's)")
    p_sim.add_argument("--out", default=None, help="output directory")

    p_det = sub.add_parser("detect", help="run scan matching + degradation detection")
    p_det.add_argument("scenario_dir")
    p_det.add_argument("--config", default=None, help="run-config JSON")
    p_det.add_argument("--out", default=None, help="output directory (default: scenario dir)")

    p_align = sub.add_parser("align", help="solve the frame alignment between two streams")
    p_align.add_argument("--lio", required=True, help="reference trajectory (TUM)")
    p_align.add_argument("--vio", required=True, help="secondary trajectory (TUM)")
    p_align.add_argument("--window", type=int, default=50, help="pairs in the window")
    p_align.add_argument("--tolerance", type=float, default=0.05, help="pairing tolerance s")
    p_align.add_argument("--kernel-c", type=float, default=1.0, help="Cauchy scale")
    p_align.add_argument("--out", default="align.json", help="result JSON path")
    p_align.add_argument("--strict", action="store_true", help="exit 3 if not converged")

    p_fuse = sub.add_parser("fuse", help="run the switching supervisor over a scenario")
    p_fuse.add_argument("scenario_dir")
    p_fuse.add_argument("--config", default=None, help="run-config JSON")
    p_fuse.add_argument("--seed", type=int, default=None)
    p_fuse.add_argument(
        "--health-source", choices=["detector", "schedule_oracle"], default=None
    )
    p_fuse.add_argument("--out", default=None, help="output directory (default: scenario dir)")
    p_fuse.add_argument("--gt", default=None, help="ground truth TUM for the summary ATE")
    p_fuse.add_argument("--strict", action="store_true", help="exit 3 on alignment failures")

    p_eval = sub.add_parser("evaluate", help="trajectory metrics against a reference")
    p_eval.add_argument("--gt", required=True, help="reference trajectory (TUM)")
    p_eval.add_argument("--est", default=None, help="estimated trajectory (TUM)")
    p_eval.add_argument("--compare", nargs="+", default=None, help="several estimates -> CSV table")
    p_eval.add_argument("--alignment", choices=["rigid", "none"], default="rigid")
    p_eval.add_argument("--rpe-delta", type=float, default=1.0)
    p_eval.add_argument("--tolerance", type=float, default=0.02)
    p_eval.add_argument("--out", default=None, help="metrics.json path")
    p_eval.add_argument("--errors-csv", default=None, help="per-pose error CSV path")
    return parser


def cmd_simulate(args) -> int:
    from dataclasses import replace

    from .simulator import scenario_from_dict

    if args.out is None:
        return _usage_error("simulate needs --out")
    if args.config is not None:
        scenario = scenario_from_dict(read_json(args.config))
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed)
    else:
        name = args.scenario or "corridor01-synth"
        try:
            scenario = make_scenario(name) if args.seed is None else make_scenario(name, args.seed)
        except KeyError:
            print(
                f"unknown scenario {name!r}; valid names: {', '.join(sorted(SCENARIOS))}",
                file=sys.stderr,
            )
            return 1
    write_scenario(scenario, args.out)
    print(f"wrote scenario {scenario.name} (seed {scenario.seed}) to {args.out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load_run_config(args.config)
    out_dir = args.out or args.scenario_dir
    os.makedirs(out_dir, exist_ok=True)
    samples = detect_health(args.scenario_dir, cfg.icp, cfg.detector)
    write_health_csv(os.path.join(out_dir, "health.csv"), samples)
    intervals = flagged_intervals(samples)
    frac = sum(s.debounced_flag for s in samples) / len(samples) if samples else 0.0
    print(
        f"{len(samples)} scans, degraded fraction {frac:.9g}, "
        f"{len(intervals)} degraded interval(s)"
    )
    return 0


def cmd_align(args) -> int:
    lio = read_tum(args.lio)
    vio = read_tum(args.vio)
    pairs = pair_poses(lio, vio, args.tolerance)
    pairs = pairs[-args.window:]
    if len(pairs) < 3:
        raise DataError("streams share too few timestamps to align")
    result = solve_alignment(
        AlignmentWindow(tuple(pairs)),
        RobustKernel(c=args.kernel_c),
        SolverOptions(k_min=min(10, len(pairs))),
    )
    write_json(args.out, alignment_to_json(result))
    print(
        f"aligned over {len(pairs)} pairs: cost {result.final_cost:.9g}, "
        f"converged {result.converged}, inliers {result.inlier_fraction:.9g}"
    )
    if args.strict and not result.converged:
        raise NumericError("alignment did not converge")
    return 0


def cmd_fuse(args) -> int:
    cfg = _load_run_config(args.config, seed=args.seed)
    if args.health_source is not None:
        cfg = RunConfig(**{**cfg.__dict__, "health_source": args.health_source})
    out_dir = args.out or args.scenario_dir
    outputs, sup, _ = run_offline(args.scenario_dir, cfg, out_dir=out_dir)
    episodes = sum(1 for ep in sup.episodes if ep.source == "vio")
    summary = f"{len(outputs)} poses, {episodes} vio episode(s)"
    if args.gt is not None:
        gt = read_tum(args.gt)
        fused = [(o.t, o.pose) for o in outputs]
        report, _ = evaluate_trajectories(fused, gt)
        summary += f", ate_rmse {report.ate_rmse:.9g} m"
    print(summary)
    if args.strict and sup.alignment_failures > 0:
        raise NumericError(f"{sup.alignment_failures} alignment attempt(s) failed to converge")
    return 0


def cmd_evaluate(args) -> int:
    gt = read_tum(args.gt)
    if args.compare:
        rows = ["file,ate_rmse,rpe_trans,rpe_rot,drift_rate,matched_pose_count,alignment_used"]
        for path in args.compare:
            est = read_tum(path)
            report, _ = evaluate_trajectories(
                est, gt, alignment=args.alignment, tolerance=args.tolerance,
                rpe_delta=args.rpe_delta,
            )
            d = report.to_dict()
            rows.append(
                f"{path},{d['ate_rmse']:.9g},{d['rpe_trans']:.9g},{d['rpe_rot']:.9g},"
                f"{d['drift_rate']:.9g},{d['matched_pose_count']},{d['alignment_used']}"
            )
        print("\n".join(rows))
        if args.out:
            with open(args.out, "w") as f:
                f.write("\n".join(rows) + "\n")
        return 0
    if not args.est:
        raise SystemExit(_usage_error("evaluate needs --est or --compare"))
    est = read_tum(args.est)
    report, errors = evaluate_trajectories(
        est, gt, alignment=args.alignment, tolerance=args.tolerance, rpe_delta=args.rpe_delta
    )
    if args.out:
        write_json(args.out, report.to_dict())
    if args.errors_csv:
        write_errors_csv(args.errors_csv, errors)
    print(
        f"ate_rmse {report.ate_rmse:.9g} m over {report.matched_pose_count} poses "
        f"(alignment {report.alignment_used}), rpe {report.rpe_trans:.9g} m / "
        f"{report.rpe_rot:.9g} deg, drift {report.drift_rate:.9g} m"
    )
    return 0


def _usage_error(msg: str) -> int:
    print(f"resilient-fusion: error: {msg}", file=sys.stderr)
    return 1


_COMMANDS = {
    "simulate": cmd_simulate,
    "detect": cmd_detect,
    "align": cmd_align,
    "fuse": cmd_fuse,
    "evaluate": cmd_evaluate,
}


def _merge_global_flags(args):
    # root-level --config/--seed/--out act as defaults for subcommands
    for root_name, sub_name in (
        ("global_config", "config"),
        ("global_seed", "seed"),
        ("global_out", "out"),
    ):
        value = getattr(args, root_name, None)
        if value is not None and hasattr(args, sub_name) and getattr(args, sub_name) is None:
            setattr(args, sub_name, value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    _merge_global_flags(args)
    try:
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError, NotADirectoryError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

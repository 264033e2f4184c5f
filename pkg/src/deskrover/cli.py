"""Command-line entry point.

Subcommands:
    run    one mission from a config file (or defaults), writing artifacts
    suite  every config file in a directory, plus a summary table
    score  offline scoring of estimated grids against truth grids
    plan   emit a waypoint file for a plan type
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import coverage, gridmap, mission, scoring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deskrover",
                                     description="Desk-scale rover autonomy sandbox")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one mission")
    run.add_argument("--config", type=Path, help="mission config file")
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--plan", choices=["nested", "spiral"])
    run.add_argument("--seed", type=int)
    run.add_argument("--preset", type=int)
    run.add_argument("--debug-planner", action="store_true")

    suite = sub.add_parser("suite", help="run every config in a directory")
    suite.add_argument("--configs", type=Path, required=True,
                       help="directory of *.txt mission configs")
    suite.add_argument("--out", type=Path, required=True)

    score = sub.add_parser("score", help="score estimated grids against truth")
    score.add_argument("--est-height", type=Path, required=True)
    score.add_argument("--truth-height", type=Path, required=True)
    score.add_argument("--est-rock", type=Path, required=True)
    score.add_argument("--truth-rock", type=Path, required=True)
    score.add_argument("--out", type=Path, help="report file (default stdout)")

    plan = sub.add_parser("plan", help="emit a waypoint plan file")
    plan.add_argument("--plan", choices=["nested", "spiral"], default="nested")
    plan.add_argument("--out", type=Path, required=True)
    return parser


def _load_mission_config(args) -> mission.MissionConfig:
    config = mission.read_config(args.config) if args.config else mission.MissionConfig()
    updates = {}
    if args.plan is not None:
        updates["plan"] = args.plan
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.preset is not None:
        updates["preset"] = args.preset
    if args.debug_planner:
        updates["debug_planner"] = True
    return replace(config, **updates) if updates else config


def cmd_run(args) -> int:
    config = _load_mission_config(args)
    result = mission.run_mission(config, args.out)
    print(f"mission complete: {result.node_count} nodes, "
          f"{result.loop_count} loop closures, "
          f"rmse {result.metric_opt.rmse:.4f} m "
          f"(dead-reckoned {result.metric_dead.rmse:.4f} m)")
    print(f"geometric score {result.map_score.geometric} of "
          f"{result.map_score.mapped_both} mapped cells, "
          f"rock F1 {result.map_score.s_rock:.4f}")
    print(f"artifacts in {args.out}")
    return 0


def cmd_suite(args) -> int:
    paths = sorted(Path(args.configs).glob("*.txt"))
    if not paths:
        print(f"no config files in {args.configs}", file=sys.stderr)
        return 1
    configs = [mission.read_config(p) for p in paths]
    rows, table, _ = mission.run_suite(configs, args.out, [p.stem for p in paths])
    print(table, end="")
    return 0 if all(not r.error for r in rows) else 1


def cmd_score(args) -> int:
    est_height = gridmap.read_grid(args.est_height)
    truth_height = gridmap.read_grid(args.truth_height)
    est_rock = gridmap.read_grid(args.est_rock)
    truth_rock = gridmap.read_grid(args.truth_rock)
    result = scoring.score_maps(est_height, truth_height, est_rock, truth_rock)
    report = scoring.format_report(result)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report)
    print(report, end="")
    return 0


def cmd_plan(args) -> int:
    plan = coverage.nested_loop_plan() if args.plan == "nested" else coverage.spiral_plan()
    coverage.write_plan(args.out, plan)
    print(f"{len(plan)} waypoints ({plan.path_length():.1f} m) -> {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "suite": cmd_suite, "score": cmd_score, "plan": cmd_plan}
    try:
        return handlers[args.command](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line: ``decnash fit | run | compare``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import plots
from .paths import FitError, fit_path_with_diagnostics
from .scenarios import ScenarioError, load_scenario, read_waypoints, scenario_to_dict
from .simulation import (
    POLICIES,
    Scenario,
    compare,
    format_table,
    frame_rows,
    run,
    summarize,
    write_log_csv,
    write_rows_csv,
)


def cmd_fit(waypoints_csv: str, degree: int, out_path: str) -> int:
    pts = read_waypoints(waypoints_csv)
    path, diag = fit_path_with_diagnostics(pts, degree)
    Path(out_path).write_text(json.dumps(path.to_dict(), indent=2) + "\n")
    print(f"fitted degree {degree} to {len(pts)} waypoints, path length {path.s_max:.3f} m")
    print(f"rms residual {diag.rms_residual:.3e} m, max residual {diag.max_residual:.3e} m")
    print(f"design matrix condition number {diag.condition_number:.3e}")
    return 0


def _apply_overrides(sc: Scenario, args) -> Scenario:
    kw = {}
    if getattr(args, "policy", None):
        kw["policy"] = args.policy
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        kw["sim_duration"] = args.duration
    return replace(sc, **kw) if kw else sc


def _echo_config(sc: Scenario, out: Path) -> None:
    (out / "effective_scenario.json").write_text(json.dumps(scenario_to_dict(sc), indent=1) + "\n")


def _jsonl(rows, path: Path) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def cmd_run(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(sc, out)
    res = run(
        sc,
        dump_graphs=args.dump_graphs,
        record_trace=args.dump_solver_trace,
        keep_solutions=args.dump_games,
    )
    write_log_csv(res.log, out / "trajectory.csv")
    write_rows_csv([res.metrics.summary()], out / "metrics.csv")
    if res.metrics.active_per_frame:
        write_rows_csv(frame_rows(res.metrics, sc.sim_dt), out / "frames.csv")
    if args.dump_graphs:
        _jsonl(res.graphs, out / "graphs.jsonl")
    if args.dump_solver_trace:
        _jsonl(res.solver_traces, out / "solver_trace.jsonl")
    if args.dump_games:
        _jsonl(({"time": round(t, 9), "game": s.to_dict(), "converged": sol.converged} for t, s, sol in res.solutions),
               out / "games.jsonl")
    if args.plots:
        if res.snapshot is None:
            print("no game was solved, skipping plots", file=sys.stderr)
        else:
            (out / "planned_trajectory.svg").write_text(plots.planned_trajectory_svg(res.snapshot))
            (out / "velocity_profile.svg").write_text(plots.velocity_profile_svg(res.snapshot))
    print(format_table(summarize([res.metrics])))
    print(f"collision events {res.metrics.collisions}, outputs in {out}")
    return 0


def cmd_compare(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(sc, out)

    def progress(m):
        print(f"  {m.policy:<12} seed {m.seed:<4} collisions {m.collisions:<3} "
              f"shortfall {m.mean_speed_shortfall:.3f}", file=sys.stderr)

    reports = compare(sc, args.runs, progress=progress)
    write_rows_csv([m.summary() for m in reports], out / "runs.csv")
    rows = summarize(reports)
    write_rows_csv(rows, out / "comparison.csv")
    table = format_table(rows)
    (out / "comparison.txt").write_text(table + "\n")
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="decnash", description="Decentralized Nash planning for vehicles on fixed paths.")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a polynomial path to an x,y waypoint CSV")
    f.add_argument("--in", dest="inp", required=True, help="waypoint CSV (columns x,y)")
    f.add_argument("--degree", type=int, default=20)
    f.add_argument("--out", required=True, help="output path JSON")

    scen_help = "scenario JSON file, or demo:straight|crossing|roundabout"
    r = sub.add_parser("run", help="simulate one scenario under one policy")
    r.add_argument("--scenario", required=True, help=scen_help)
    r.add_argument("--policy", choices=POLICIES)
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float, help="override the simulated duration [s]")
    r.add_argument("--out-dir", default="out")
    r.add_argument("--plots", action="store_true", help="write SVG snapshots of the largest solved game")
    r.add_argument("--dump-graphs", action="store_true", help="write per-frame interaction graphs")
    r.add_argument("--dump-solver-trace", action="store_true", help="write per-iteration solver traces")
    r.add_argument("--dump-games", action="store_true", help="write every solved game as JSON lines")

    c = sub.add_parser("compare", help="run all policies several times and tabulate the metrics")
    c.add_argument("--scenario", required=True, help=scen_help)
    c.add_argument("--runs", type=int, default=5)
    c.add_argument("--seed", type=int, help="base seed; run k uses base + k")
    c.add_argument("--duration", type=float)
    c.add_argument("--out-dir", default="out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(args.inp, args.degree, args.out)
        if args.command == "run":
            return cmd_run(args)
        return cmd_compare(args)
    except (ScenarioError, FitError, OSError, ValueError) as exc:
        print(f"decnash: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

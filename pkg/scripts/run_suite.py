"""Roundabout comparison suite: every policy over several seeds.

Writes per-run metrics, per-frame timing and the comparison table to
``--out-dir``. Usage::

    python scripts/run_suite.py --runs 5 --out-dir results/roundabout
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from decnash.scenarios import load_scenario, with_seed
from decnash.simulation import POLICIES, format_table, frame_rows, run, summarize, with_policy, write_rows_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="demo:roundabout")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--duration", type=float)
    ap.add_argument("--threads", type=int, default=0, help="per-frame solve threads (0 = sequential timing)")
    ap.add_argument("--policies", nargs="+", default=list(POLICIES), choices=POLICIES)
    ap.add_argument("--out-dir", default="results/suite")
    args = ap.parse_args(argv)

    sc = load_scenario(args.scenario)
    if args.duration is not None:
        sc = replace(sc, sim_duration=args.duration)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    reports = []
    for pol in args.policies:
        for k in range(args.runs):
            seed = args.seed + k
            t0 = time.perf_counter()
            m = run(with_policy(with_seed(sc, seed), pol), threads=args.threads).metrics
            reports.append(m)
            write_rows_csv(frame_rows(m, sc.sim_dt), out / f"frames_{pol}_{seed}.csv")
            print(f"{pol:<12} seed {seed}  collisions {m.collisions:<3} shortfall {m.mean_speed_shortfall:.3f}  "
                  f"max players {m.max_players_per_game:<3} failures {m.solver_failures}/{m.n_solves}  "
                  f"({time.perf_counter() - t0:.0f} s)", file=sys.stderr, flush=True)
    write_rows_csv([m.summary() for m in reports], out / "runs.csv")
    rows = summarize(reports)
    write_rows_csv(rows, out / "comparison.csv")
    table = format_table(rows)
    (out / "comparison.txt").write_text(table + "\n")
    (out / "collisions.json").write_text(json.dumps({m.policy + f"_{m.seed}": m.collisions for m in reports}, indent=1))
    print(table)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Full offline Monte Carlo study across the packaged scenarios.

Runs every (preset, sample size) pair at full replicate counts and writes
one summary CSV per pair plus a combined long-format CSV. This is the
offline companion to the desk-scale `recmean mc-study` CLI runs; at the
default 10000 replicates expect hours of runtime, so use --workers.

Example (quick smoke):
    python3 scripts/run_full_study.py --reps 200 --sizes 100,200 \
        --presets scenario_bc_1 --out-dir /tmp/study --workers 4
"""

import argparse
import csv
import os
import sys
import time

from recmean import available_presets, load_config, parse_link, run_mc_study
from recmean.mc import _CSV_FIELDS, mc_summary_to_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", default=None,
                    help="comma list of preset names (default: all)")
    ap.add_argument("--sizes", default="50,100,200,400",
                    help="comma list of per-replicate sample sizes")
    ap.add_argument("--reps", type=int, default=10000,
                    help="replicates per (preset, n) cell")
    ap.add_argument("--fit-link", default=None,
                    help="link used for fitting (default: each preset's own)")
    ap.add_argument("--workers", type=int, default=None,
                    help="worker processes per study")
    ap.add_argument("--out-dir", required=True, help="output directory")
    args = ap.parse_args(argv)

    presets = (args.presets.split(",") if args.presets
               else available_presets())
    sizes = [int(s) for s in args.sizes.split(",")]
    os.makedirs(args.out_dir, exist_ok=True)

    combined = os.path.join(args.out_dir, "combined.csv")
    with open(combined, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["preset", "fit_link", "n"] + _CSV_FIELDS)
        for preset in presets:
            cfg = load_config(preset.strip())
            link = parse_link(args.fit_link) if args.fit_link else cfg.link
            for n in sizes:
                t0 = time.time()
                summary = run_mc_study(cfg, link, reps=args.reps, n=n,
                                       workers=args.workers)
                cell = os.path.join(args.out_dir, f"{preset}_n{n}.csv")
                mc_summary_to_csv(summary, cell)
                for r in summary.rows:
                    writer.writerow([
                        preset, summary.fit_link, n, r.name, r.truth,
                        r.mean_est, r.bias, r.bias_pct, r.sd,
                        r.mean_se_fisher, r.mean_se_sandwich,
                        r.cp_fisher, r.cp_sandwich,
                        summary.reps, summary.failures,
                    ])
                fh.flush()
                print(f"{preset} n={n}: {summary.failures} failures, "
                      f"{time.time() - t0:.0f}s -> {cell}", file=sys.stderr)
    print(f"combined table -> {combined}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

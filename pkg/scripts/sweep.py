"""Feasibility sweep over data length and noise scaling for the three methods.

Set ZONOTUBE_WORKERS to cap the process pool.

    python scripts/sweep.py --runs 50 --out results/sweep.csv
"""

import argparse
import os
import time

from zonotube.simbench import run_feasibility_sweep, write_sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, nargs="+", default=[15, 30])
    ap.add_argument("--alpha", type=float, nargs="+", default=[0.1, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--feasibility", choices=("t0", "whole-run"), default="t0")
    ap.add_argument("--out", default="results/sweep.csv")
    args = ap.parse_args()

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    t = time.monotonic()
    rows = run_feasibility_sweep(args.T, args.alpha, args.runs, feasibility=args.feasibility)
    write_sweep_csv(rows, args.out)
    print(f"{'method':<11}" + "".join(f"{a:>8g}" for a in args.alpha))
    for T in args.T:
        for m in ("data_prior", "data_only", "tzpc"):
            pct = [r.feasible_pct for r in rows if r.method == m and r.T == T]
            print(f"{m:<11}" + "".join(f"{p:8.0f}" for p in pct) + f"   T={T}")
    print(f"{args.out} ({time.monotonic() - t:.0f} s)")


if __name__ == "__main__":
    main()

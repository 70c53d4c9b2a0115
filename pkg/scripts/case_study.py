"""Mobile-robot case study: one elastic-tube run, trajectory CSV and invariant checks.

    python scripts/case_study.py --out results/case_study
"""

import argparse
import os

from zonotube.simbench import ScenarioConfig, lyapunov_monitor, run_phase_portrait, verify_log


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=20)
    ap.add_argument("--alpha", type=float, default=0.7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--prior", default="data_prior")
    ap.add_argument("--out", default="results/case_study")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    cfg = ScenarioConfig(T=args.T, alpha=args.alpha, seed=args.seed, prior=args.prior)
    log = run_phase_portrait(cfg, os.path.join(args.out, "portrait.csv"))
    log.to_json(os.path.join(args.out, "runlog.json"))

    S = log.summary
    print(f"feasible at t0: {S['feasible_at_t0']}  steps: {S['steps_completed']}")
    print(f"target reached at t = {S['reached_target_at']}  violations: {S['violations']}")
    rep = lyapunov_monitor(log)
    print(f"lambda_bar = {rep.lambda_bar:.4f}  max V = {rep.max_level:.4f}")
    for c in verify_log(log):
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name} {c.detail}")


if __name__ == "__main__":
    main()

"""Command-line interface: identify, run, sweep, portrait, verify."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from .. import setops
from .closed_loop import RunLog, build_scenario, run_phase_portrait, simulate_closed_loop
from .config import CONTROLLERS, PRIOR_MODES, ScenarioConfig
from .monitors import lyapunov_monitor, verify_log
from .sweep import FEASIBILITY_MODES, METHODS, run_feasibility_sweep, write_sweep_csv

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_CONTRADICTION = 3


def _scenario_args(p: argparse.ArgumentParser, multi: bool = False) -> None:
    nargs = "+" if multi else None
    p.add_argument("--config", help="scenario config JSON; flags override its fields")
    p.add_argument("--T", type=int, nargs=nargs, help="data length")
    p.add_argument("--alpha", type=float, nargs=nargs, help="noise scaling factor")
    p.add_argument("--prior", choices=PRIOR_MODES)
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--seed", type=int)
    p.add_argument("--ts", type=float, help="sampling time [s]")
    p.add_argument("--sigma", type=float, help="weight of lambda in the tube-gain objective")
    p.add_argument("--steps", type=int, help="closed-loop steps")


def _config(args, skip=()) -> ScenarioConfig:
    cfg = ScenarioConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = ScenarioConfig.from_json(fh.read())
    kw = {}
    for k in ("T", "alpha", "prior", "controller", "seed", "ts", "sigma", "steps"):
        v = getattr(args, k, None)
        if v is not None and k not in skip:
            kw[k] = v
    return cfg.with_(**kw)


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_identify(args) -> int:
    cfg = _config(args)
    mode = cfg.prior
    sc = build_scenario(cfg, mode)
    out = _outdir(args.out)
    sc.batch.to_csv(os.path.join(out, "batch.csv"))
    if sc.error:
        print(sc.error, file=sys.stderr)
        return EXIT_CONTRADICTION
    sets = sc.sets
    doc = {
        "config": cfg.to_dict(),
        "prior_mode": mode,
        "nominal_A": sets.nominal_A.tolist(),
        "nominal_B": sets.nominal_B.tolist(),
        "M_w": setops.to_json(sets.mw),
        "M_dw": setops.to_json(sets.mdw),
        "M_ol": setops.to_json(sets.mol_c),
        "M_d": None if sets.md is None else setops.to_json(sets.md),
        "disturbance": setops.to_json(sc.Zw),
        "X": setops.to_json(sc.X),
        "U": setops.to_json(sc.U),
    }
    with open(os.path.join(out, "model_sets.json"), "w") as fh:
        json.dump(doc, fh, indent=1)
    print(f"wrote {out}/model_sets.json and {out}/batch.csv")
    return EXIT_OK


def _report(runlog: RunLog) -> None:
    S = runlog.summary
    keys = ("feasible_at_t0", "t0_stage", "steps_completed", "violations", "containment_failures",
            "frozen_steps", "uncertified_steps", "broken_steps", "reached_target_at")
    print("  ".join(f"{k}={S.get(k)}" for k in keys))


def cmd_run(args) -> int:
    cfg = _config(args)
    runlog = simulate_closed_loop(cfg)
    out = _outdir(args.out)
    runlog.to_json(os.path.join(out, "runlog.json"))
    runlog.trajectory_csv(os.path.join(out, "trajectory.csv"))
    _report(runlog)
    if runlog.summary.get("t0_stage") == "contradiction":
        return EXIT_CONTRADICTION
    return EXIT_OK


def cmd_portrait(args) -> int:
    cfg = _config(args)
    out = _outdir(args.out)
    runlog = run_phase_portrait(cfg, os.path.join(out, "portrait.csv"))
    runlog.to_json(os.path.join(out, "runlog.json"))
    _report(runlog)
    return EXIT_CONTRADICTION if runlog.summary.get("t0_stage") == "contradiction" else EXIT_OK


def cmd_sweep(args) -> int:
    base = _config(args, skip=("T", "alpha", "seed"))
    Ts = args.T or [15, 20, 30]
    alphas = args.alpha or [0.1, 0.25, 0.5, 0.75, 1.0]
    t = time.monotonic()

    def progress(i, n):
        if args.verbose:
            print(f"\r{i}/{n} tasks", end="", file=sys.stderr, flush=True)

    rows = run_feasibility_sweep(Ts, alphas, args.runs, tuple(args.methods), base, args.feasibility,
                                 args.seed or 0, progress=progress)
    if args.verbose:
        print(file=sys.stderr)
    write_sweep_csv(rows, args.out)
    for r in rows:
        print(f"{r.method:<11} T={r.T:<3} alpha={r.alpha:<5g} feasible={r.feasible_pct:5.1f}%  runs={r.runs}")
    print(f"wrote {args.out} in {time.monotonic() - t:.0f} s")
    return EXIT_OK


def cmd_verify(args) -> int:
    runlog = RunLog.from_json(args.log)
    checks = verify_log(runlog)
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name:<22} {c.detail}")
    rep = lyapunov_monitor(runlog)
    print(f"lambda_bar={rep.lambda_bar:.6g}  max_V={rep.max_level:.6g}  offset={rep.offset:.3g}")
    return EXIT_OK if all(c.ok for c in checks) else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zonotube", description="Data-driven elastic tube MPC benchmark")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("identify", help="collect a batch and export the model sets")
    _scenario_args(s)
    s.add_argument("--out", default="identify_out", help="output directory")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("run", help="one closed-loop scenario")
    _scenario_args(s)
    s.add_argument("--out", default="run_out", help="output directory")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="feasibility sweep over T and alpha")
    _scenario_args(s, multi=True)
    s.add_argument("--runs", type=int, default=50)
    s.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    s.add_argument("--feasibility", choices=FEASIBILITY_MODES, default="t0")
    s.add_argument("--out", default="sweep.csv", help="results CSV")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("portrait", help="trajectory and tube export of one run")
    _scenario_args(s)
    s.add_argument("--out", default="portrait_out", help="output directory")
    s.set_defaults(func=cmd_portrait)

    s = sub.add_parser("verify", help="invariant checks over a run log")
    s.add_argument("log", help="runlog.json")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    p = build_parser()
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

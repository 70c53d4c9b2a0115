"""Monte-Carlo feasibility sweeps over (data length, noise scaling).

Every seed's data batch is shared by all methods at that grid point, so the
comparison is paired.  Tasks are independent and run in a process pool whose
size is capped by ``ZONOTUBE_WORKERS``; results come back in task order and
only the parent process writes output.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import multiprocessing as mp
import os
from dataclasses import dataclass

from .closed_loop import build_scenario, scenario_data, simulate_closed_loop
from .config import ScenarioConfig
from .tzpc import simulate_tzpc

log = logging.getLogger(__name__)

__all__ = ["METHODS", "FEASIBILITY_MODES", "SweepRow", "worker_count", "evaluate_seed", "run_feasibility_sweep",
           "run_many", "write_sweep_csv"]

METHODS = ("tzpc", "data_only", "data_prior")
FEASIBILITY_MODES = ("t0", "whole-run")
CSV_HEADER = ("method", "T", "alpha", "feasible_pct", "runs")


@dataclass(frozen=True)
class SweepRow:
    method: str
    T: int
    alpha: float
    feasible_pct: float
    runs: int


def worker_count(n_tasks: int | None = None) -> int:
    cap = os.environ.get("ZONOTUBE_WORKERS")
    n = os.cpu_count() or 1
    if cap:
        n = max(1, min(n, int(cap)))
    if n_tasks is not None:
        n = min(n, max(1, n_tasks))
    return n


def _feasible(runlog, mode: str) -> bool:
    S = runlog.summary
    if mode == "t0":
        return bool(S["feasible_at_t0"])
    steps = runlog.config["steps"]
    return bool(S["feasible_at_t0"] and S["steps_completed"] == steps and not S["aborted"]
                and S["violations"] == 0)


def evaluate_seed(base: ScenarioConfig, T: int, alpha: float, seed: int, methods=METHODS,
                  feasibility: str = "t0") -> dict:
    """Feasibility of each method on one seeded batch."""
    cfg = base.with_(T=T, alpha=alpha, seed=seed)
    data = scenario_data(cfg, with_offline="data_prior" in methods)
    t0_only = feasibility == "t0"
    cache = {}

    def scenario(mode, c):
        # one set of model sets per mode; each run gets its own disturbance stream
        if mode not in cache:
            cache[mode] = build_scenario(c, mode, data)
        return dataclasses.replace(cache[mode], cfg=c, rng_run=c.rng_streams()[2])

    out = {}
    for m in methods:
        if m == "tzpc":
            c = cfg.with_(controller="tzpc", prior="data_only")
            lg = simulate_tzpc(c, scenario("data_only", c), t0_only)
        else:
            c = cfg.with_(controller="elastic", prior=m)
            lg = simulate_closed_loop(c, scenario(m, c), t0_only)
        out[m] = _feasible(lg, feasibility)
    return out


def _task(args):
    return evaluate_seed(*args)


def run_feasibility_sweep(Ts, alphas, runs: int, methods=METHODS, base: ScenarioConfig | None = None,
                          feasibility: str = "t0", seed0: int = 0, workers: int | None = None,
                          progress=None) -> list[SweepRow]:
    """Percentage of feasible runs per (method, T, alpha)."""
    if feasibility not in FEASIBILITY_MODES:
        raise ValueError(f"feasibility must be one of {FEASIBILITY_MODES}")
    Ts, alphas = list(Ts), list(alphas)
    if not Ts or not alphas or runs < 1:
        raise ValueError("empty sweep grid")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    base = base or ScenarioConfig()
    grid = [(T, a) for T in Ts for a in alphas]
    tasks = [(base, T, a, seed0 + k, tuple(methods), feasibility) for T, a in grid for k in range(runs)]
    n = worker_count(len(tasks)) if workers is None else max(1, workers)
    if n == 1:
        results = []
        for i, t in enumerate(tasks):
            results.append(_task(t))
            if progress:
                progress(i + 1, len(tasks))
    else:
        with mp.get_context("spawn").Pool(n) as pool:
            results = []
            for i, r in enumerate(pool.imap(_task, tasks, chunksize=1)):
                results.append(r)
                if progress:
                    progress(i + 1, len(tasks))
    counts = {}
    for (_, T, a, *_rest), res in zip(tasks, results):
        for m, ok in res.items():
            counts.setdefault((m, T, a), []).append(ok)
    rows = []
    for m in methods:
        for T, a in grid:
            oks = counts[(m, T, a)]
            rows.append(SweepRow(m, T, a, 100.0 * sum(oks) / len(oks), len(oks)))
    return rows


def _run_one(cfg: ScenarioConfig):
    if cfg.controller == "tzpc":
        return simulate_tzpc(cfg)
    return simulate_closed_loop(cfg)


def run_many(configs, workers: int | None = None) -> list:
    """Run logs for a list of configs, in order, on the capped process pool."""
    configs = list(configs)
    n = worker_count(len(configs)) if workers is None else max(1, workers)
    if n == 1:
        return [_run_one(c) for c in configs]
    with mp.get_context("spawn").Pool(n) as pool:
        return pool.map(_run_one, configs, chunksize=1)


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.method, r.T, f"{r.alpha:g}", f"{r.feasible_pct:.1f}", r.runs])


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected header {rd.fieldnames}")
        return [SweepRow(r["method"], int(r["T"]), float(r["alpha"]), float(r["feasible_pct"]), int(r["runs"]))
                for r in rd]

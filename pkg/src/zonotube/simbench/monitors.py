"""Checks over a finished run log (works on in-memory and reloaded logs)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .closed_loop import RunLog

__all__ = ["LyapunovReport", "Check", "lyapunov_monitor", "verify_log"]

DECAY_TOL = 1e-8
LEVEL_TOL = 1e-6


@dataclass
class LyapunovReport:
    lambda_bar: float
    decay_ok: bool
    level_ok: bool
    max_level: float
    offset: float
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.decay_ok and self.level_ok


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


def _status(v) -> str:
    return v if isinstance(v, str) else getattr(v, "value", str(v))


def _records(log: RunLog):
    return [r for r in log.records if r.get("x") is not None]


def lyapunov_monitor(log: RunLog, disturbance_free: bool | None = None) -> LyapunovReport:
    """Contraction factor and decay of ``V(e) = max_j H_j e / h_j``.

    ``lam`` in record ``t`` maps ``E(t)`` to ``E(t+1)``.  Disturbance-free runs
    must satisfy ``V0(e(t)) <= lam_bar^k V0(e(0))`` with ``V0`` taken on the
    initial tube and ``k`` the number of non-frozen steps before ``t``.
    Disturbed runs report the level ``V(e(t))`` on the current tube and the
    empirical offset ``max V(e+) - lam_bar V(e)``.
    """
    if disturbance_free is None:
        disturbance_free = bool(log.config.get("disturbance_free", False))
    recs = _records(log)
    lams = [r["lam"] for r in recs[:-1] if not r.get("frozen") and r.get("certified", True)]
    lam_bar = max(lams) if lams else 1.0
    failures = []
    decay_ok = True
    if disturbance_free and recs:
        V0 = recs[0]["V_ref"]
        k = 0
        for i, r in enumerate(recs):
            bound = lam_bar ** k * V0 + DECAY_TOL
            if not r.get("frozen") and r["V_ref"] > bound:
                decay_ok = False
                failures.append((r["t"], r["V_ref"], bound))
            if not recs[i].get("frozen"):
                k += 1
    levels = [r["V"] for r in recs if not r.get("frozen") or r.get("certified", True)]
    max_level = max(levels, default=0.0)
    level_ok = max_level <= 1 + LEVEL_TOL
    offs = [recs[i + 1]["V"] - lam_bar * recs[i]["V"] for i in range(len(recs) - 1)]
    return LyapunovReport(lam_bar, decay_ok, level_ok, max_level, max(offs, default=0.0), failures)


def verify_log(log: RunLog) -> list[Check]:
    """Invariant suite over a run log; every entry must hold for a sound run."""
    S = log.summary
    recs = _records(log)
    checks = []
    viol = sum(int(not r["in_X"]) + int(not r["in_U"]) for r in recs)
    checks.append(Check("admissible_sets", viol == 0, f"{viol} violations"))
    cont = [r["t"] for r in recs if not r["contained"]]
    checks.append(Check("tube_containment", not cont, f"steps {cont[:10]}" if cont else ""))
    bad = []
    for a, b in zip(recs, recs[1:]):
        if np.any(np.asarray(b["h_e"]) > np.asarray(a["h_e"]) * (1 + 1e-12) + 1e-15):
            bad.append(b["t"])
    checks.append(Check("tube_nesting", not bad, f"steps {bad[:10]}" if bad else ""))
    rf = int(S.get("rf_events", 0))
    checks.append(Check("recursive_feasibility", rf == 0, f"{rf} events"))
    qp_fail = [r["t"] for r in recs if _status(r["qp_status"]) != "optimal"]
    aborted = bool(S.get("aborted", False))
    checks.append(Check("completed", not aborted,
                        f"aborted; non-optimal QPs at {qp_fail[:10]}" if aborted else f"{len(recs)} steps"))
    rep = lyapunov_monitor(log)
    checks.append(Check("lyapunov", rep.ok, f"lambda_bar={rep.lambda_bar:.4g} max_V={rep.max_level:.4g}"
                        + (f" decay failures {rep.failures[:3]}" if rep.failures else "")))
    return checks

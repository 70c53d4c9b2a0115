"""Fixed-gain, fixed-tube baseline.

The gain is the quadratic regulator of the nominal model and never changes.
The tube offsets solve the facet recursion

    h = max_{e in P(H, h)} H (A_bar + B_bar K) e + H c_w + F + y

where ``F`` bounds the model mismatch over the whole admissible set X x U, so
the tube does not depend on the nominal pair and is never updated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import tmpc
from ..optim import Status
from ..setops import EmptySetError, Polytope, membership
from ..tubegain import TubeState, lyapunov_value, mismatch_bound_over_box
from .closed_loop import RunLog, Scenario, _summary_base, build_scenario
from .config import ScenarioConfig

log = logging.getLogger(__name__)

__all__ = ["TzpcController", "tube_fixed_point", "build_tzpc", "tzpc_t0", "simulate_tzpc"]

FIXED_POINT_CAP = 100
FIXED_POINT_TOL = 1e-8


@dataclass(eq=False)
class TzpcController:
    K_fix: np.ndarray
    h_fix: np.ndarray | None
    H: np.ndarray
    F: np.ndarray
    converged: bool
    iterations: int
    Xt: Polytope | None = None
    Ut: Polytope | None = None
    term: tmpc.TerminalIngredients | None = None
    stage: str = "ok"

    @property
    def feasible(self) -> bool:
        return self.stage == "ok"


def _support_rows(H, h, D) -> np.ndarray:
    if np.all(h == 0):
        return np.zeros(len(D))
    return tmpc.tube_support(Polytope(H, h), D)


def tube_fixed_point(H, A_cl, offset, cap: int = FIXED_POINT_CAP, tol: float = FIXED_POINT_TOL):
    """Iterate ``h <- sigma_{P(H,h)}(H A_cl) + offset`` from ``h = offset``.

    Returns ``(h, converged, iterations)``.  If the cap is hit while the
    increments still shrink geometrically, the limit is extrapolated and
    accepted only if it is itself a fixed point within ``tol``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    offset = np.asarray(offset, dtype=float)
    if np.any(offset < 0):
        return offset, False, 0
    D = H @ A_cl
    h = offset.copy()
    ratio, d = np.inf, None
    for k in range(1, cap + 1):
        h_new = _support_rows(H, h, D) + offset
        d_new = h_new - h
        h = h_new
        if not np.all(np.isfinite(h)):
            return h, False, k
        step = np.max(np.abs(d_new))
        if step <= tol * (1 + np.max(np.abs(h))):
            return h, True, k
        if d is not None:
            ratio = step / max(np.max(np.abs(d)), 1e-300)
        d = d_new
    if ratio < 1:
        h_lim = h + d * ratio / (1 - ratio)
        res = np.max(np.abs(_support_rows(H, h_lim, D) + offset - h_lim))
        if res <= tol * (1 + np.max(np.abs(h_lim))):
            return h_lim, True, cap
    return h, False, cap


def build_tzpc(sc: Scenario) -> TzpcController:
    """Gain, fixed tube and tightened sets for the scenario's data-only model sets."""
    mpc = sc.mpc_config()
    K, _ = tmpc.lqr(mpc.A, mpc.B, mpc.Q, mpc.R)
    H = sc.X.H
    prob = sc.problem
    F = mismatch_bound_over_box(H, sc.sets.mol_c, prob.pdw, sc.X, sc.U)
    offset = prob.Hc + F + prob.y
    h, conv, it = tube_fixed_point(H, mpc.A + mpc.B @ K, offset)
    ctl = TzpcController(K, h if conv else None, H, F, conv, it)
    if not conv:
        ctl.stage = "fixed_point"
        return ctl
    E = Polytope(H, h)
    Xt = Polytope(sc.X.H, sc.X.h - tmpc.tube_support(E, sc.X.H))
    Ut = Polytope(sc.U.H, sc.U.h - tmpc.tube_support(E, sc.U.H @ K))
    ctl.Xt, ctl.Ut = Xt, Ut
    if np.any(Xt.h < 0) or np.any(Ut.h < 0) or Xt.is_empty() or Ut.is_empty():
        ctl.stage = "tightening"
        return ctl
    try:
        ctl.term = tmpc.terminal_ingredients(mpc, Xt, Ut)
    except (tmpc.ConfigurationError, EmptySetError):
        ctl.stage = "terminal"
    return ctl


def tzpc_t0(sc: Scenario):
    """Controller and first plan; ``stage`` names the first failing step."""
    if sc.sets is None:
        return None, None, "contradiction"
    ctl = build_tzpc(sc)
    if not ctl.feasible:
        return ctl, None, ctl.stage
    x0 = np.asarray(sc.cfg.x0, dtype=float)
    tube0 = TubeState(ctl.H, np.maximum(ctl.h_fix, 1e-12))
    try:
        xbar0 = tmpc.choose_initial_nominal(x0, tube0, sc.cfg.initial_offset)
    except EmptySetError:
        return ctl, None, "initial"
    e0 = x0 - xbar0
    U_first = Polytope(sc.U.H, sc.U.h - sc.U.H @ (ctl.K_fix @ e0))
    plan = tmpc.solve_tmpc(sc.mpc_config(), ctl.Xt, ctl.Ut, ctl.term, xbar0,
                           constrain_first_state=False, U_first=U_first)
    return ctl, plan, "ok" if plan.ok else "qp"


def simulate_tzpc(cfg: ScenarioConfig, scenario: Scenario | None = None, t0_only: bool = False) -> RunLog:
    sc = scenario if scenario is not None else build_scenario(cfg, "data_only")
    runlog = RunLog(cfg.to_dict(), [], _summary_base(cfg))
    S = runlog.summary
    ctl, plan, stage = tzpc_t0(sc)
    S["t0_stage"] = stage
    if stage != "ok":
        return runlog
    S["feasible_at_t0"] = True
    if t0_only:
        return runlog
    mpc = sc.mpc_config()
    plant = sc.plant()
    tube = TubeState(ctl.H, np.maximum(ctl.h_fix, 1e-12))
    target = np.asarray(cfg.target_state, dtype=float)
    qp_status = Status.OPTIMAL
    all_opt = True
    for t in range(cfg.steps):
        x = plant.state.copy()
        xbar, ubar = plan.x[0], plan.u[0]
        e = x - xbar
        u = ubar + ctl.K_fix @ e
        in_X, in_U = membership(sc.X, x, 1e-9), membership(sc.U, u, 1e-9)
        contained = bool(np.all(tube.H_e @ e <= tube.h_e + 1e-6))
        runlog.records.append({
            "t": t, "x": x, "u": u, "xbar": xbar, "ubar": ubar, "e": e, "h_e": tube.h_e, "lam": 1.0,
            "rho": float("nan"), "V_K": None, "V": lyapunov_value(e, tube), "V_ref": lyapunov_value(e, tube),
            "J": plan.J, "lp_status": Status.OPTIMAL, "qp_status": qp_status, "frozen": True, "certified": True,
            "broken": not plan.ok, "in_X": in_X, "in_U": in_U, "contained": contained,
            "y": None, "l": None, "z": None,
        })
        S["violations"] += int(not in_X) + int(not in_U)
        S["containment_failures"] += int(not contained)
        if S["reached_target_at"] is None and np.linalg.norm(x - target) <= 0.1:
            S["reached_target_at"] = t
        w = np.zeros(3) if cfg.disturbance_free else plant.sample_disturbance(sc.rng_run)
        plant.step(u, w)
        S["steps_completed"] = t + 1
        new = tmpc.solve_tmpc(mpc, ctl.Xt, ctl.Ut, ctl.term, plan.x[1], constrain_first_state=False,
                              U_first=ctl.Ut)
        if qp_status is Status.OPTIMAL and not new.ok:
            S["rf_events"] += 1
        qp_status = new.status
        if not new.ok:
            all_opt = False
            S["broken_steps"] += 1
            S["aborted"] = True
            break
        plan = new
    S["all_optimal"] = all_opt
    return runlog

"""Closed-loop simulation of the elastic tube MPC.

Loop order (per step ``t``):

1. the nominal pair ``(xbar(t), ubar(t))`` is the one planned at ``t-1``; the
   first input of every plan is committed, so the tube-gain LP at ``t`` sees
   exactly the pair that will be used;
2. the LP picks ``K(t)`` and ``E(t+1) = lam(t) E(t)``; its input-margin rows
   keep ``K(t) E(t)`` within a budget ``s`` fixed at ``t = 0``;
3. the MPC plans from ``xbar(t)`` with states ``k >= 1`` tightened by
   ``E(t+1)`` and inputs ``k >= 1`` by ``s``;
4. ``u(t) = ubar(t) + K(t) e(t)`` is applied.

Tubes only shrink and the input budget is constant, so the constraint sets
of later QPs contain the earlier ones and the shifted plan stays feasible.

At ``t = 0`` no previous plan exists: a bootstrap LP at ``(xbar(0), 0)`` and a
bootstrap MPC pick the first input, then the LP is re-solved at that input
with ``lam`` and margins capped by the bootstrap values, so the bootstrap plan
stays feasible.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import sysid, tmpc
from ..optim import Status
from ..setops import ConstrainedMatrixZonotope, EmptySetError, Polytope, concat_disturbance, membership
from ..tubegain import LAMBDA_EPS, TubeGainProblem, TubeState, lyapunov_value, update_tube
from . import rosbot
from .config import ScenarioConfig
from .plant import Plant

log = logging.getLogger(__name__)

__all__ = [
    "Scenario",
    "ScenarioData",
    "RunLog",
    "scenario_data",
    "build_scenario",
    "model_sets_for",
    "elastic_t0",
    "simulate_closed_loop",
    "run_phase_portrait",
]

CONTAINMENT_TOL = 1e-6
# smallest tube scale relative to E(0); below this, e = x - xbar is rounding noise
MIN_TUBE_SCALE = 1e-8


@dataclass(eq=False)
class Scenario:
    """Everything that is fixed for one seed: true plant, sets and data."""

    cfg: ScenarioConfig
    A_true: np.ndarray
    B_true: np.ndarray
    Zw: object
    X: Polytope
    U: Polytope
    batch: sysid.DataBatch
    offline_prior: ConstrainedMatrixZonotope | None
    rng_run: np.random.Generator
    sets: sysid.ModelSets | None = None
    error: str | None = None
    _problem: TubeGainProblem | None = None

    def plant(self) -> Plant:
        return Plant(self.A_true, self.B_true, self.Zw, np.asarray(self.cfg.x0, dtype=float), self.U)

    @property
    def problem(self) -> TubeGainProblem:
        if self._problem is None:
            self._problem = TubeGainProblem(self.X.H, self.batch, self.sets.mdw, self.Zw)
        return self._problem

    def mpc_config(self) -> tmpc.MpcConfig:
        A, B = self.sets.nominal_A, self.sets.nominal_B
        xr = np.asarray(self.cfg.target_state, dtype=float)
        ur, res = tmpc.steady_state(A, B, xr)
        if res > 1e-9:
            log.warning("no exact nominal steady state at the target (residual %.2e)", res)
        n, m = B.shape
        return tmpc.MpcConfig(self.cfg.horizon, self.cfg.Q_scale * np.eye(n), self.cfg.R_scale * np.eye(m),
                              A, B, xr, ur)


@dataclass(frozen=True, eq=False)
class ScenarioData:
    """Plant, sets and the (online, offline) data batches of one seed."""

    A_true: np.ndarray
    B_true: np.ndarray
    Zw: object
    X: Polytope
    U: Polytope
    batch: sysid.DataBatch
    offline: sysid.DataBatch | None


def scenario_data(cfg: ScenarioConfig, with_offline: bool = True) -> ScenarioData:
    rng_data, rng_prior, _ = cfg.rng_streams()
    A, B = rosbot.rosbot_model(cfg.ts)
    X, U = rosbot.state_set(), rosbot.input_set()
    Zw = rosbot.disturbance(cfg.alpha)
    start = cfg.x0 if cfg.data_start is None else cfg.data_start
    pl = Plant(A, B, Zw, np.asarray(start, dtype=float), U)
    batch = sysid.collect_batch(pl, cfg.T, sysid.Excitation(cfg.excitation), rng_data)
    offline = None
    if with_offline:
        off = Plant(A, B, rosbot.offline_disturbance(), np.zeros(3), U)
        offline = sysid.collect_batch(off, rosbot.OFFLINE_T, sysid.Excitation(cfg.offline_excitation), rng_prior)
    return ScenarioData(A, B, Zw, X, U, batch, offline)


def model_sets_for(batch, Zw, mode: str, prior=None, A_true=None, B_true=None) -> sysid.ModelSets:
    if mode == "data_only":
        return sysid.build_model_sets(batch, Zw)
    if mode == "data_prior":
        return sysid.build_model_sets(batch, Zw, prior)
    if mode == "exact":
        return sysid.build_model_sets(batch, Zw, sysid.exact_prior(A_true, B_true))
    if mode == "none":
        mw_T = concat_disturbance(Zw, batch.T)
        mw = ConstrainedMatrixZonotope(mw_T.C, mw_T.G)
        mol, Ab, Bb = sysid.refined_open_loop_set(batch, mw)
        return sysid.ModelSets(mw_T, mw, None, mw, mol, Ab, Bb)
    raise ValueError(f"unknown prior mode {mode!r}")


def build_scenario(cfg: ScenarioConfig, mode: str | None = None, data: ScenarioData | None = None) -> Scenario:
    """Model sets for ``cfg`` (``mode`` overrides ``cfg.prior``; TZPC uses data-only sets).

    ``data`` lets several methods share one batch so comparisons are paired.
    """
    if mode is None:
        mode = "data_only" if cfg.controller == "tzpc" else cfg.prior
    if data is None:
        data = scenario_data(cfg, with_offline=mode == "data_prior")
    prior = None
    if mode == "data_prior":
        prior = sysid.build_prior_from_offline(data.offline, rosbot.offline_disturbance())
    rng_run = cfg.rng_streams()[2]
    sc = Scenario(cfg, data.A_true, data.B_true, data.Zw, data.X, data.U, data.batch, prior, rng_run)
    try:
        sc.sets = model_sets_for(data.batch, data.Zw, mode, prior, data.A_true, data.B_true)
    except EmptySetError as exc:
        sc.error = f"contradiction: {exc}"
    return sc


@dataclass(eq=False)
class RunLog:
    config: dict
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        recs = []
        for r in self.records:
            r = dict(r)
            V = r.pop("V_K", None)
            r["V_K_hash"] = None if V is None else hashlib.sha1(np.ascontiguousarray(V).tobytes()).hexdigest()[:16]
            recs.append(r)
        return {"config": self.config, "summary": self.summary, "records": recs}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, default=_jsonable)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "RunLog":
        text = text_or_path
        if not str(text).lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        d = json.loads(text)
        return cls(d["config"], d["records"], d["summary"])

    def trajectory_csv(self, path) -> None:
        """Per step: state, nominal state and tube offsets (plot-ready)."""
        recs = [r for r in self.records if r.get("x") is not None]
        if not recs:
            return
        n = len(recs[0]["x"])
        q = len(recs[0]["h_e"]) if recs[0].get("h_e") is not None else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"xbar{i + 1}" for i in range(n)]
                       + [f"h{j + 1}" for j in range(q)] + ["lambda", "frozen"])
            for r in recs:
                xb = r.get("xbar")
                xb = [float("nan")] * n if xb is None else xb
                he = r.get("h_e")
                he = [float("nan")] * q if he is None else he
                w.writerow([r["t"]] + list(r["x"]) + list(xb) + list(he) + [r.get("lam"), int(bool(r.get("frozen")))])


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Status):
        return o.value
    raise TypeError(type(o).__name__)


@dataclass(eq=False)
class T0Result:
    stage: str  # "ok" or the first failing stage
    tube0: TubeState
    xbar0: np.ndarray
    e0: np.ndarray
    lp: object = None
    tube1: TubeState | None = None
    margin: np.ndarray | None = None
    term: tmpc.TerminalIngredients | None = None
    plan: tmpc.MpcSolution | None = None
    mpc: tmpc.MpcConfig | None = None
    floor: object = None

    @property
    def feasible(self) -> bool:
        return self.stage == "ok"


def _tightened(sc: Scenario, gain, tube_next):
    s = tmpc.input_margin(sc.U, sc.batch.U0, gain.V_K, tube_next)
    return tmpc.tighten_state(sc.X, tube_next), Polytope(sc.U.H, sc.U.h - s), s


class _Floor:
    """Lower bound on lam keeping the tube above the sustainable scale.

    The scale is recomputed only when a nominal pair raises the cached
    elementwise max of the model term ``z``.
    """

    def __init__(self, sc: Scenario, tube0: TubeState):
        self.sc, self.tube0 = sc, tube0
        self.z_cap = None
        self.mu = 0.0

    def update(self, pairs=(), z=None) -> None:
        if self.sc.cfg.tube_floor <= 0 or self.mu == np.inf:
            return
        prob = self.sc.problem
        zs = [prob.z(xb, ub) for xb, ub in pairs] + ([] if z is None else [z])
        znew = np.max(zs, axis=0)
        if self.z_cap is not None and np.all(znew <= self.z_cap):
            return
        self.z_cap = znew if self.z_cap is None else np.maximum(self.z_cap, znew)
        self.mu = prob.sustainable_scale(self.tube0, z=self.z_cap)

    def lam_min(self, scale: float) -> float:
        return max(self.sc.cfg.tube_floor * self.mu, MIN_TUBE_SCALE) / scale


def _plan_pairs(plan: tmpc.MpcSolution, mpc: tmpc.MpcConfig, first: int = 1):
    return [(plan.x[k], plan.u[k]) for k in range(first, len(plan.u))] + [(mpc.x_ref, mpc.u_ref)]


def elastic_t0(sc: Scenario) -> T0Result:
    cfg = sc.cfg
    x0 = np.asarray(cfg.x0, dtype=float)
    tube0 = TubeState.initial(sc.X)
    xbar0 = tmpc.choose_initial_nominal(x0, tube0, cfg.initial_offset)
    e0 = x0 - xbar0
    res = T0Result("lp", tube0, xbar0, e0)
    if sc.sets is None:
        res.stage = "contradiction"
        return res
    prob, U = sc.problem, sc.U
    mpc = sc.mpc_config()
    res.mpc = mpc
    has_e0 = bool(np.any(e0 != 0))

    def applied(u):
        return (U.H, e0, U.h - U.H @ u) if has_e0 else None

    u_guess = np.zeros(sc.batch.m)
    floor = _Floor(sc, tube0)
    floor.update([(xbar0, u_guess), (mpc.x_ref, mpc.u_ref)])
    lp_b = prob.solve(tube0, xbar0, u_guess, cfg.sigma, lam_min=floor.lam_min(1.0), applied_input=applied(u_guess))
    for _ in range(cfg.bootstrap_iters):
        if not lp_b.ok:
            res.stage = "lp"
            return res
        tube1 = update_tube(tube0, lp_b.lam)
        Xt, Ut, s_b = _tightened(sc, lp_b.gain, tube1)
        try:
            term = tmpc.terminal_ingredients(mpc, Xt, Ut)
        except (tmpc.ConfigurationError, EmptySetError):
            res.stage = "terminal"
            return res
        U_first = Polytope(U.H, U.h - U.H @ (lp_b.gain.K @ e0))
        plan_b = tmpc.solve_tmpc(mpc, Xt, Ut, term, xbar0, constrain_first_state=False, U_first=U_first)
        if not plan_b.ok:
            res.stage = "qp"
            return res
        u0 = plan_b.u[0]
        floor.update(_plan_pairs(plan_b, mpc, 0))
        lo = floor.lam_min(1.0)
        lp0 = prob.solve(tube0, xbar0, u0, cfg.sigma, lam_max=lp_b.lam, lam_min=lo,
                         input_margin=(U.H, tube1.polytope, s_b), applied_input=applied(u0))
        if lp0.ok:
            break
        lp_b = prob.solve(tube0, xbar0, u0, cfg.sigma, lam_min=lo, applied_input=applied(u0))
    else:
        res.stage = "bootstrap"
        return res
    tube1 = update_tube(tube0, lp0.lam)
    Xt, Ut, s0 = _tightened(sc, lp0.gain, tube1)
    plan = tmpc.solve_tmpc(mpc, Xt, Ut, term, xbar0, u_first=u0, constrain_first_state=False)
    res.lp, res.tube1, res.margin, res.term, res.floor = lp0, tube1, s0, term, floor
    if not plan.ok:
        res.stage = "qp"
        return res
    res.plan = plan
    res.stage = "ok"
    return res


def _shifted(plan: tmpc.MpcSolution, term: tmpc.TerminalIngredients, mpc: tmpc.MpcConfig) -> tmpc.MpcSolution:
    xN = plan.x[-1]
    uN = mpc.u_ref + term.K_T @ (xN - mpc.x_ref)
    x = np.vstack([plan.x[1:], mpc.A @ xN + mpc.B @ uN])
    u = np.vstack([plan.u[1:], uN])
    return tmpc.MpcSolution(Status.OPTIMAL, x, u, float("nan"))


def _summary_base(cfg):
    return {"feasible_at_t0": False, "t0_stage": None, "steps_completed": 0, "violations": 0,
            "containment_failures": 0, "frozen_steps": 0, "uncertified_steps": 0, "broken_steps": 0,
            "rf_events": 0, "aborted": False,
            "all_optimal": False, "reached_target_at": None, "controller": cfg.controller}


def simulate_closed_loop(cfg: ScenarioConfig, scenario: Scenario | None = None, t0_only: bool = False,
                         on_step=None) -> RunLog:
    """Run one scenario; infeasibility is reported in the log, never raised.

    ``on_step(t, ctx)`` is called after each tube-gain solve with a dict
    holding the scenario, tube, gain result, nominal pair and error.
    """
    if cfg.controller == "tzpc":
        from .tzpc import simulate_tzpc

        return simulate_tzpc(cfg, scenario, t0_only)
    sc = scenario if scenario is not None else build_scenario(cfg)
    runlog = RunLog(cfg.to_dict(), [], _summary_base(cfg))
    S = runlog.summary
    t0 = elastic_t0(sc)
    S["t0_stage"] = t0.stage
    if sc.error:
        S["error"] = sc.error
    if not t0.feasible:
        return runlog
    S["feasible_at_t0"] = True
    if t0_only:
        return runlog
    X, U, prob, mpc = sc.X, sc.U, sc.problem, t0.mpc
    plant = sc.plant()
    rng = sc.rng_run
    target = np.asarray(cfg.target_state, dtype=float)
    tube0 = t0.tube0
    tube, lp, tube_next, s = tube0, t0.lp, t0.tube1, t0.margin
    plan, term, floor = t0.plan, t0.term, t0.floor
    Ut = Polytope(U.H, U.h - s)
    term_scale = tube_next.h_e[0] / tube0.h_e[0]
    frozen, broken, certified = False, False, True
    lp_status, qp_status = Status.OPTIMAL, Status.OPTIMAL
    gain = lp.gain
    qp_fail_streak = 0
    all_opt = True
    if on_step is not None:
        on_step(0, {"scenario": sc, "tube": tube, "lp": lp, "xbar": plan.x[0], "ubar": plan.u[0],
                    "e": plant.state - plan.x[0]})
    for t in range(cfg.steps):
        x = plant.state.copy()
        xbar, ubar = plan.x[0], plan.u[0]
        e = x - xbar
        u = ubar + gain.K @ e
        in_X = membership(X, x, 1e-9)
        in_U = membership(U, u, 1e-9)
        contained = bool(np.all(tube.H_e @ e <= tube.h_e + CONTAINMENT_TOL))
        rec = {
            "t": t, "x": x, "u": u, "xbar": xbar, "ubar": ubar, "e": e, "h_e": tube.h_e,
            "lam": lp.lam if certified else 1.0, "rho": gain.rho, "V_K": gain.V_K,
            "V": lyapunov_value(e, tube), "V_ref": lyapunov_value(e, tube0), "J": plan.J,
            "lp_status": lp_status, "qp_status": qp_status, "frozen": frozen, "certified": certified,
            "broken": broken,
            "in_X": in_X, "in_U": in_U, "contained": contained,
            "y": lp.bounds.y, "l": lp.bounds.l, "z": lp.bounds.z,
        }
        runlog.records.append(rec)
        S["violations"] += int(not in_X) + int(not in_U)
        S["containment_failures"] += int(not contained)
        if S["reached_target_at"] is None and np.linalg.norm(x - target) <= 0.1:
            S["reached_target_at"] = t
        w = np.zeros(3) if cfg.disturbance_free else plant.sample_disturbance(rng)
        plant.step(u, w)
        S["steps_completed"] = t + 1
        # ---- step t+1: tube-gain LP at the committed pair
        xbar_n, ubar_n = plan.x[1], plan.u[1] if len(plan.u) > 1 else mpc.u_ref + term.K_T @ (plan.x[1] - mpc.x_ref)
        tube = tube_next
        z_n = prob.z(xbar_n, ubar_n)
        floor.update(z=z_n)
        lo = floor.lam_min(tube.h_e[0] / tube0.h_e[0])
        lp = prob.solve(tube, xbar_n, ubar_n, cfg.sigma, lam_min=lo, input_margin=(U.H, tube.polytope, s), z=z_n)
        frozen = broken = certified = False
        if not lp.ok:
            lp = prob.solve(tube, xbar_n, ubar_n, cfg.sigma, lam_max=1.0, input_margin=(U.H, tube.polytope, s), z=z_n)
        lp_status = lp.status
        if lp.ok:
            gain = lp.gain
            certified = True
            frozen = lp.lam >= 1 - LAMBDA_EPS
            tube_next = update_tube(tube, min(lp.lam, 1.0))
        else:
            # uncertified: keep the previous gain and tube size
            frozen = True
            tube_next = update_tube(tube, 1.0)
        S["frozen_steps"] += int(frozen)
        S["uncertified_steps"] += int(not certified)
        Xt = tmpc.tighten_state(X, tube_next)
        scale = tube_next.h_e[0] / tube0.h_e[0]
        if scale <= cfg.terminal_recompute_ratio * term_scale:
            try:
                term = tmpc.terminal_ingredients(mpc, Xt, Ut)
                term_scale = scale
            except (tmpc.ConfigurationError, EmptySetError):
                pass
        if on_step is not None:
            on_step(t + 1, {"scenario": sc, "tube": tube, "lp": lp, "xbar": xbar_n, "ubar": ubar_n,
                            "e": plant.state - xbar_n})
        new_plan = tmpc.solve_tmpc(mpc, Xt, Ut, term, xbar_n, u_first=ubar_n, constrain_first_state=False)
        # LP optimal now, QP optimal before, QP infeasible now
        if certified and qp_status is Status.OPTIMAL and not new_plan.ok:
            S["rf_events"] += 1
        qp_status = new_plan.status
        if new_plan.ok:
            plan = new_plan
            qp_fail_streak = 0
        else:
            all_opt = False
            broken = True
            S["broken_steps"] += 1
            qp_fail_streak += 1
            if qp_fail_streak >= 2:
                S["aborted"] = True
                break
            plan = _shifted(plan, term, mpc)
    S["all_optimal"] = all_opt and S["broken_steps"] == 0 and S["uncertified_steps"] == 0
    return runlog


def run_phase_portrait(cfg: ScenarioConfig, csv_path=None) -> RunLog:
    """Single seeded run; optionally writes the (x, xbar, h_e) trajectory as CSV."""
    runlog = simulate_closed_loop(cfg)
    if csv_path is not None:
        runlog.trajectory_csv(csv_path)
    return runlog

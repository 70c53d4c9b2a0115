"""Uniform LP/QP contract on top of HiGHS (LP) and Clarabel (QP).

Every solver call returns a :class:`SolveResult` whose status is one of
``optimal``, ``infeasible``, ``unbounded`` or ``numerical_failure``.  A
reported infeasibility is confirmed by a phase-one LP that minimises the
largest constraint violation; a problem is only declared infeasible when that
minimum exceeds ``TOL.infeasibility``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import clarabel
import highspy
import numpy as np
import scipy.sparse as sp

__all__ = [
    "Status",
    "Tolerances",
    "TOL",
    "configure",
    "LpProblem",
    "QpProblem",
    "SolveResult",
    "solve_lp",
    "solve_qp",
    "phase_one",
]


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class Tolerances:
    primal: float = 1e-8
    dual: float = 1e-8
    acceptance: float = 1e-6
    infeasibility: float = 1e-7


TOL = Tolerances()


def configure(**kwargs) -> Tolerances:
    """Replace the shared tolerance profile (e.g. ``configure(primal=1e-9)``)."""
    global TOL
    TOL = replace(TOL, **kwargs)
    return TOL


def _as2d(a, ncols):
    if a is None:
        return np.zeros((0, ncols))
    if sp.issparse(a):
        return sp.csr_matrix(a, dtype=float) if a.shape[0] else np.zeros((0, ncols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, ncols))
    return a


def _as1d(b):
    if b is None:
        return np.zeros(0)
    return np.atleast_1d(np.asarray(b, dtype=float)).ravel()


@dataclass
class LpProblem:
    """min cost.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub."""

    cost: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.cost = _as1d(self.cost)
        n = self.cost.size
        self.A_ub = _as2d(self.A_ub, n)
        self.b_ub = _as1d(self.b_ub)
        self.A_eq = _as2d(self.A_eq, n)
        self.b_eq = _as1d(self.b_eq)
        self.lb = np.full(n, -np.inf) if self.lb is None else _as1d(self.lb).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else _as1d(self.ub).copy()
        if self.A_ub.shape != (self.b_ub.size, n) or self.A_eq.shape != (self.b_eq.size, n):
            raise ValueError("constraint blocks do not match the number of variables")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors do not match the number of variables")
        if not (np.all(np.isfinite(self.b_ub)) and np.all(np.isfinite(self.b_eq))):
            raise ValueError("right-hand sides must be finite")

    @property
    def n(self) -> int:
        return self.cost.size


@dataclass
class QpProblem:
    """min 0.5 x'Hx + f.x subject to the LpProblem constraint blocks."""

    H: np.ndarray
    f: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise ValueError("H must be square")
        if not np.allclose(self.H, self.H.T, atol=1e-10, rtol=0):
            raise ValueError("H must be symmetric")
        if n and np.linalg.eigvalsh(self.H).min() < -1e-8:
            raise ValueError("H must be positive semidefinite")
        lp = LpProblem(self.f, self.A_ub, self.b_ub, self.A_eq, self.b_eq, self.lb, self.ub)
        self.f, self.A_ub, self.b_ub = lp.cost, lp.A_ub, lp.b_ub
        self.A_eq, self.b_eq, self.lb, self.ub = lp.A_eq, lp.b_eq, lp.lb, lp.ub

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass
class SolveResult:
    status: Status
    x: np.ndarray | None = None
    objective: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    duals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def primal_residual(p, x) -> float:
    r = 0.0
    if p.b_ub.size:
        r = max(r, float(np.max(p.A_ub @ x - p.b_ub, initial=0.0)))
    if p.b_eq.size:
        r = max(r, float(np.max(np.abs(p.A_eq @ x - p.b_eq))))
    r = max(r, float(np.max(p.lb - x, initial=0.0)), float(np.max(x - p.ub, initial=0.0)))
    return r


def _scale(p) -> float:
    parts = [1.0]
    for a in (p.b_ub, p.b_eq):
        if a.size:
            parts.append(float(np.max(np.abs(a))))
    return max(parts)


def phase_one(p) -> float:
    """Smallest achievable max-violation of the constraints of ``p`` (bounds kept hard)."""
    n = p.n
    m_ub, m_eq = p.b_ub.size, p.b_eq.size
    A_ub, A_eq = sp.csr_matrix(p.A_ub), sp.csr_matrix(p.A_eq)
    A = [sp.hstack([A_ub, sp.csr_matrix(-np.ones((m_ub, 1)))]),
         sp.hstack([A_eq, sp.csr_matrix(-np.ones((m_eq, 1)))]),
         sp.hstack([-A_eq, sp.csr_matrix(-np.ones((m_eq, 1)))])]
    b = np.concatenate([p.b_ub, p.b_eq, -p.b_eq])
    lb = np.concatenate([p.lb, [0.0]])
    ub = np.concatenate([p.ub, [np.inf]])
    if np.any(p.lb > p.ub):
        return float(np.max(p.lb - p.ub))
    c = np.zeros(n + 1)
    c[-1] = 1.0
    st, x, obj, _, _ = _highs(c, sp.vstack(A).tocsr(), b, np.zeros((0, n + 1)), np.zeros(0), lb, ub)
    if st != "optimal":
        return float("inf")
    return float(obj)


def _stack(A_ub, A_eq):
    """Inequality rows over equality rows as one CSR matrix."""
    if sp.issparse(A_ub) or sp.issparse(A_eq):
        return sp.vstack([sp.csr_matrix(A_ub), sp.csr_matrix(A_eq)]).tocsr()
    return sp.csr_matrix(np.vstack([A_ub, A_eq]))


def _highs(c, A_ub, b_ub, A_eq, b_eq, lb, ub, presolve=True, A=None):
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("primal_feasibility_tolerance", 1e-9)
    h.setOptionValue("dual_feasibility_tolerance", 1e-9)
    h.setOptionValue("threads", 1)
    if not presolve:
        h.setOptionValue("presolve", "off")
    n = c.size
    inf = highspy.kHighsInf
    h.addVars(n, np.where(np.isfinite(lb), lb, -inf), np.where(np.isfinite(ub), ub, inf))
    h.changeColsCost(n, np.arange(n, dtype=np.int32), c)
    A = _stack(A_ub, A_eq) if A is None else A
    lo = np.concatenate([np.full(b_ub.size, -inf), b_eq])
    hi = np.concatenate([b_ub, b_eq])
    if A.shape[0]:
        h.addRows(A.shape[0], lo, hi, A.nnz, A.indptr.astype(np.int32), A.indices.astype(np.int32), A.data)
    h.run()
    ms = h.getModelStatus()
    if ms == highspy.HighsModelStatus.kOptimal:
        sol = h.getSolution()
        x = np.array(sol.col_value)
        row_dual = np.array(sol.row_dual)
        col_dual = np.array(sol.col_dual)
        return "optimal", x, float(c @ x), row_dual, col_dual
    if ms == highspy.HighsModelStatus.kInfeasible:
        return "infeasible", None, float("nan"), None, None
    if ms in (highspy.HighsModelStatus.kUnbounded, highspy.HighsModelStatus.kUnboundedOrInfeasible):
        return "unbounded", None, float("nan"), None, None
    return "failure", None, float("nan"), None, None


def _classify_failure(p, hint: str) -> SolveResult:
    viol = phase_one(p)
    if viol > TOL.infeasibility * _scale(p):
        return SolveResult(Status.INFEASIBLE, primal_residual=viol)
    if hint == "unbounded":
        return SolveResult(Status.UNBOUNDED)
    return SolveResult(Status.NUMERICAL_FAILURE, primal_residual=viol)


def solve_lp(p: LpProblem) -> SolveResult:
    """Solve ``p`` with HiGHS; statuses are certified as described in the module docstring."""
    A = _stack(p.A_ub, p.A_eq)
    for presolve in (True, False):
        st, x, obj, yr, yc = _highs(p.cost, p.A_ub, p.b_ub, p.A_eq, p.b_eq, p.lb, p.ub, presolve, A)
        if st == "optimal":
            break
    if st != "optimal":
        return _classify_failure(p, st)
    pres = primal_residual(p, x)
    dres = float(np.max(np.abs(p.cost - A.T @ yr - yc), initial=0.0))
    scale = _scale(p)
    if pres > TOL.primal * scale or dres > TOL.dual * max(1.0, float(np.max(np.abs(p.cost), initial=0.0))):
        return SolveResult(Status.NUMERICAL_FAILURE, x, obj, pres, dres)
    m = p.b_ub.size
    duals = {"ineq": yr[:m], "eq": yr[m:], "bounds": yc}
    return SolveResult(Status.OPTIMAL, x, obj, pres, dres, duals)


def lp_dual_objective(p: LpProblem, res: SolveResult) -> float:
    """Dual objective value reconstructed from the multipliers of an optimal LP."""
    y_ub, y_eq, z = res.duals["ineq"], res.duals["eq"], res.duals["bounds"]
    val = float(p.b_ub @ y_ub + p.b_eq @ y_eq)
    # bound multipliers: positive part pairs with lb, negative with ub
    zl = np.where(z > 0, z, 0.0)
    zu = np.where(z < 0, z, 0.0)
    val += float(np.sum(np.where(zl != 0, zl * p.lb, 0.0)) + np.sum(np.where(zu != 0, zu * p.ub, 0.0)))
    return val


def solve_qp(p: QpProblem) -> SolveResult:
    """Solve ``p`` with Clarabel and report KKT residuals."""
    n = p.n
    rows_eq, rhs_eq = p.A_eq, p.b_eq
    fin_ub = np.isfinite(p.ub)
    fin_lb = np.isfinite(p.lb)
    eye = sp.identity(n, format="csr")
    A_ineq = sp.vstack([sp.csr_matrix(p.A_ub), eye[fin_ub], -eye[fin_lb]])
    b_ineq = np.concatenate([p.b_ub, p.ub[fin_ub], -p.lb[fin_lb]])
    A = sp.vstack([sp.csr_matrix(rows_eq), A_ineq]).tocsc()
    b = np.concatenate([rhs_eq, b_ineq])
    cones = []
    if rhs_eq.size:
        cones.append(clarabel.ZeroConeT(rhs_eq.size))
    if b_ineq.size:
        cones.append(clarabel.NonnegativeConeT(b_ineq.size))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    settings.tol_ktratio = 1e-8
    settings.max_iter = 200
    P = sp.csc_matrix(np.triu(p.H))
    solver = clarabel.DefaultSolver(P, p.f, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if status in ("Solved", "AlmostSolved"):
        x = np.asarray(sol.x)
        y = np.asarray(sol.z)
        pres = primal_residual(p, x)
        dres = float(np.max(np.abs(p.H @ x + p.f + A.T @ y), initial=0.0))
        obj = float(0.5 * x @ p.H @ x + p.f @ x)
        # interior-point iterates are not vertex-exact: judged at the acceptance tolerance
        scale = _scale(p)
        fscale = max(1.0, float(np.max(np.abs(p.f), initial=0.0)), float(np.max(np.abs(p.H), initial=0.0)))
        if pres <= TOL.acceptance * scale and dres <= TOL.acceptance * fscale:
            x = np.clip(x, p.lb, p.ub)
            return SolveResult(Status.OPTIMAL, x, obj, pres, dres, {"constraints": y})
        return SolveResult(Status.NUMERICAL_FAILURE, x, obj, pres, dres)
    if "PrimalInfeasible" in status:
        return _classify_failure(p, "infeasible")
    if "DualInfeasible" in status:
        return _classify_failure(p, "unbounded")
    return _classify_failure(p, "failure")

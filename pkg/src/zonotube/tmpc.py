"""Nominal tube MPC.

Constraint tightening against the error tube, terminal ingredients (quadratic
regulator plus maximal admissible invariant set), the horizon-N QP and the
applied control law ``u = ubar + K e``.  Regulation to a nonzero target is a
coordinate shift: costs are taken on ``x - x_r`` and ``u - u_r`` with
``(x_r, u_r)`` a steady state of the nominal model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .optim import LpProblem, QpProblem, Status, solve_lp, solve_qp
from .setops import EmptySetError, Polytope, membership, support, vertices

log = logging.getLogger(__name__)

__all__ = [
    "MpcConfig",
    "TerminalIngredients",
    "MpcSolution",
    "ConfigurationError",
    "tube_support",
    "tighten_state",
    "tighten_input",
    "input_margin",
    "steady_state",
    "lqr",
    "max_admissible_set",
    "terminal_ingredients",
    "solve_tmpc",
    "control_input",
    "choose_initial_nominal",
    "stage_cost",
]


class ConfigurationError(ValueError):
    """Terminal ingredients cannot be built for the given sets."""


@dataclass(frozen=True, eq=False)
class MpcConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    A: np.ndarray
    B: np.ndarray
    x_ref: np.ndarray | None = None
    u_ref: np.ndarray | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        Q, R = np.atleast_2d(self.Q).astype(float), np.atleast_2d(self.R).astype(float)
        if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < 0:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
            raise ValueError("R must be positive definite")
        A, B = np.atleast_2d(self.A).astype(float), np.atleast_2d(self.B).astype(float)
        n, m = B.shape
        xr = np.zeros(n) if self.x_ref is None else np.asarray(self.x_ref, dtype=float)
        ur = np.zeros(m) if self.u_ref is None else np.asarray(self.u_ref, dtype=float)
        for k, v in (("Q", Q), ("R", R), ("A", A), ("B", B), ("x_ref", xr), ("u_ref", ur)):
            object.__setattr__(self, k, v)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class TerminalIngredients:
    K_T: np.ndarray
    P_T: np.ndarray
    T_set: Polytope
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class MpcSolution:
    status: Status
    x: np.ndarray | None = None  # (N+1, n)
    u: np.ndarray | None = None  # (N, m)
    J: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def stage_cost(cfg: MpcConfig, x, u) -> float:
    dx, du = np.asarray(x) - cfg.x_ref, np.asarray(u) - cfg.u_ref
    return float(dx @ cfg.Q @ dx + du @ cfg.R @ du)


def tube_support(tube_poly: Polytope, D) -> np.ndarray:
    """Support of the tube in each row direction of D (vertex max, LP fallback)."""
    D = np.atleast_2d(D)
    V = vertices(tube_poly)
    if V is not None and len(V):
        return np.max(V @ D.T, axis=0)
    return np.array([support(tube_poly, d) for d in D])


def tighten_state(X: Polytope, tube) -> Polytope:
    E = tube if isinstance(tube, Polytope) else tube.polytope
    return Polytope(X.H, X.h - tube_support(E, X.H))


def input_margin(U: Polytope, U0, V_K, tube) -> np.ndarray:
    E = tube if isinstance(tube, Polytope) else tube.polytope
    K = np.asarray(U0) @ np.asarray(V_K)
    return tube_support(E, U.H @ K)


def tighten_input(U: Polytope, U0, V_K, tube) -> Polytope:
    return Polytope(U.H, U.h - input_margin(U, U0, V_K, tube))


def steady_state(A, B, x_ref):
    """Least-norm input holding ``x_ref`` under the nominal model, and the residual."""
    x_ref = np.asarray(x_ref, dtype=float)
    rhs = x_ref - A @ x_ref
    u = np.linalg.lstsq(B, rhs, rcond=None)[0]
    return u, float(np.max(np.abs(B @ u - rhs), initial=0.0))


def lqr(A, B, Q, R):
    """Infinite-horizon regulator: returns (K, P) with u = K x."""
    P = sla.solve_discrete_are(A, B, Q, R)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K, P


def _redundant(H, h, row, rhs, tol=1e-9) -> bool:
    res = solve_lp(LpProblem(-row, H, h))
    if res.status is Status.UNBOUNDED:
        return False
    if not res.ok:
        raise ConfigurationError(f"admissible-set LP failed: {res.status.value}")
    return -res.objective <= rhs + tol * (1 + abs(rhs))


def max_admissible_set(A_cl, H, h, max_iter: int = 50) -> tuple[Polytope, int]:
    """Largest subset of {Hx <= h} that x+ = A_cl x keeps inside {Hx <= h}."""
    H, h = np.atleast_2d(H), np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ConfigurationError("constraint set does not contain the origin")
    Hs, hs = H.copy(), h.copy()
    M = np.eye(A_cl.shape[0])
    for k in range(1, max_iter + 1):
        M = A_cl @ M
        new = H @ M
        added = False
        for row, rhs in zip(new, h):
            if not np.any(np.abs(row) > 1e-14):
                continue
            if not _redundant(Hs, hs, row, rhs):
                Hs = np.vstack([Hs, row])
                hs = np.append(hs, rhs)
                added = True
        if not added:
            return _prune(Hs, hs), k
    raise ConfigurationError(f"invariant-set iteration did not converge in {max_iter} steps")


def _prune(H, h) -> Polytope:
    keep = np.ones(len(h), dtype=bool)
    for i in range(len(h)):
        keep[i] = False
        if not _redundant(H[keep], h[keep], H[i], h[i]):
            keep[i] = True
    return Polytope(H[keep], h[keep])


def terminal_ingredients(cfg: MpcConfig, Xt: Polytope, Ut: Polytope, max_iter: int = 50) -> TerminalIngredients:
    """Regulator gain and cost with the maximal admissible set, in absolute coordinates."""
    K, P = lqr(cfg.A, cfg.B, cfg.Q, cfg.R)
    Hx, hx = Xt.H, Xt.h - Xt.H @ cfg.x_ref
    Hu, hu = Ut.H, Ut.h - Ut.H @ cfg.u_ref
    H = np.vstack([Hx, Hu @ K])
    h = np.concatenate([hx, hu])
    if np.any(h < -1e-12):
        raise ConfigurationError("target outside the tightened constraints")
    Tset, it = max_admissible_set(cfg.A + cfg.B @ K, H, np.maximum(h, 0.0), max_iter)
    Tset = Tset.translated(cfg.x_ref)  # back to absolute coordinates
    return TerminalIngredients(K, P, Tset, it)


def solve_tmpc(cfg: MpcConfig, Xt: Polytope, Ut: Polytope, term: TerminalIngredients, x_init, *,
               u_first=None, constrain_first_state: bool = True, U_first: Polytope | None = None) -> MpcSolution:
    """Horizon-N nominal QP.

    ``u_first`` pins the first input; ``U_first`` replaces the tightened set
    for it; ``constrain_first_state=False`` drops the k = 0 state constraint
    (the initial nominal state is given).
    """
    N, n, m = cfg.N, cfg.n, cfg.m
    nx, nu = (N + 1) * n, N * m
    nv = nx + nu
    xr, ur = cfg.x_ref, cfg.u_ref
    # cost 0.5 v'Hv + f'v  (doubled weights)
    Hblocks = [2 * cfg.Q] * N + [2 * term.P_T] + [2 * cfg.R] * N
    Hq = sla.block_diag(*Hblocks)
    f = np.concatenate([np.tile(-2 * cfg.Q @ xr, N), -2 * term.P_T @ xr, np.tile(-2 * cfg.R @ ur, N)])
    const = N * float(xr @ cfg.Q @ xr + ur @ cfg.R @ ur) + float(xr @ term.P_T @ xr)
    # dynamics
    Aeq = np.zeros(((N + 1) * n, nv))
    beq = np.zeros((N + 1) * n)
    Aeq[:n, :n] = np.eye(n)
    beq[:n] = x_init
    for k in range(N):
        r = (k + 1) * n
        Aeq[r:r + n, (k + 1) * n:(k + 2) * n] = np.eye(n)
        Aeq[r:r + n, k * n:(k + 1) * n] = -cfg.A
        Aeq[r:r + n, nx + k * m:nx + (k + 1) * m] = -cfg.B
    lb = np.full(nv, -np.inf)
    ub = np.full(nv, np.inf)
    if u_first is not None:
        lb[nx:nx + m] = ub[nx:nx + m] = np.asarray(u_first, dtype=float)
    rows, rhs = [], []
    for k in range(N):
        if k > 0 or constrain_first_state:
            R = np.zeros((Xt.H.shape[0], nv))
            R[:, k * n:(k + 1) * n] = Xt.H
            rows.append(R), rhs.append(Xt.h)
        if k == 0 and u_first is not None:
            continue
        Uk = U_first if (k == 0 and U_first is not None) else Ut
        R = np.zeros((Uk.H.shape[0], nv))
        R[:, nx + k * m:nx + (k + 1) * m] = Uk.H
        rows.append(R), rhs.append(Uk.h)
    R = np.zeros((term.T_set.H.shape[0], nv))
    R[:, N * n:(N + 1) * n] = term.T_set.H
    rows.append(R), rhs.append(term.T_set.h)
    prob = QpProblem(Hq, f, sp.csr_matrix(np.vstack(rows)), np.concatenate(rhs), sp.csr_matrix(Aeq), beq, lb, ub)
    res = solve_qp(prob)
    if not res.ok:
        return MpcSolution(res.status)
    v = res.x
    x = v[:nx].reshape(N + 1, n)
    x[0] = x_init
    u = v[nx:].reshape(N, m)
    if u_first is not None:
        u[0] = u_first
    return MpcSolution(Status.OPTIMAL, x, u, res.objective + const)


def control_input(sol: MpcSolution, gain, e) -> np.ndarray:
    return sol.u[0] + gain.K @ np.asarray(e, dtype=float)


def choose_initial_nominal(x0, tube, offset=None) -> np.ndarray:
    """Initial nominal state with ``x0 - xbar`` in the tube (default: ``xbar = x0``)."""
    x0 = np.asarray(x0, dtype=float)
    delta = np.zeros_like(x0) if offset is None else np.asarray(offset, dtype=float)
    E = tube if isinstance(tube, Polytope) else tube.polytope
    if not membership(E, delta):
        raise EmptySetError("initial error outside the tube")
    return x0 - delta

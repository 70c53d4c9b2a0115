"""Joint tube/gain update.

One linear program per step picks the feedback parametrisation ``V_K`` (with
``K = U0 V_K``) and a contraction factor ``lam`` such that the polytopic error
tube ``E = {e : H_e e <= h_e}`` is mapped into ``lam * E`` for every model and
disturbance consistent with the refined disturbance set.  The ingredients are
per-facet bounds

* ``y``: additive disturbance,
* ``l``: model uncertainty acting on the closed-loop error (column-wise
  model bounds times the tube's per-coordinate radius and ``|K|``),
* ``z``: model uncertainty acting on the nominal pair ``(xbar, ubar)``,

each obtained from support functions of the coefficient polytope ``P_dw``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .optim import LpProblem, Status, solve_lp
from .setops import (
    CoeffPolytope,
    ConstrainedMatrixZonotope,
    ConstrainedZonotope,
    Polytope,
    Zonotope,
    inf_norm_bound,
    interval_enclosure,
    sample_polytope,
    vertices,
)
from .sysid import DataBatch, refined_open_loop_set

log = logging.getLogger(__name__)

__all__ = [
    "LAMBDA_MIN",
    "LAMBDA_EPS",
    "TubeState",
    "GainParam",
    "FacetBounds",
    "TubeGainResult",
    "TubeGainProblem",
    "build_pdw",
    "facet_y",
    "facet_l",
    "facet_z",
    "solve_tube_gain",
    "update_tube",
    "error_set_next",
    "lyapunov_value",
    "gamma_compare",
    "next_error_samples",
    "contraction_violations",
    "mismatch_bound_over_box",
]

LAMBDA_MIN = 1e-3
LAMBDA_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class TubeState:
    H_e: np.ndarray
    h_e: np.ndarray
    lam: float = 1.0
    M_e: float = field(default=float("nan"))

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H_e, dtype=float))
        h = np.asarray(self.h_e, dtype=float).reshape(-1)
        if np.any(h <= 0):
            raise ValueError("tube offsets must be positive")
        object.__setattr__(self, "H_e", H)
        object.__setattr__(self, "h_e", h)
        if np.isnan(self.M_e):
            object.__setattr__(self, "M_e", inf_norm_bound(Polytope(H, h)))

    @property
    def radius(self) -> np.ndarray:
        """Per-coordinate bound max |e_i| over the tube."""
        r = self.__dict__.get("_radius")
        if r is None:
            box = interval_enclosure(self.polytope)
            r = np.maximum(np.abs(box.lower), np.abs(box.upper))
            object.__setattr__(self, "_radius", r)
        return r

    @classmethod
    def initial(cls, X: Polytope) -> "TubeState":
        """Tube equal to the admissible state set."""
        return cls(X.H, X.h, 1.0)

    @property
    def polytope(self) -> Polytope:
        return Polytope(self.H_e, self.h_e)


@dataclass(frozen=True, eq=False)
class GainParam:
    V_K: np.ndarray
    K: np.ndarray
    rho: float
    P_dual: np.ndarray


@dataclass(frozen=True, eq=False)
class FacetBounds:
    y: np.ndarray
    l: np.ndarray
    z: np.ndarray


@dataclass(frozen=True, eq=False)
class TubeGainResult:
    status: Status
    gain: GainParam | None
    lam: float
    bounds: FacetBounds
    objective: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def build_pdw(mdw: ConstrainedMatrixZonotope) -> CoeffPolytope:
    """Coefficient polytope of the refined disturbance set (vertices cached when cheap)."""
    pdw = mdw.coeffs
    pdw.vertices()
    return pdw


def facet_y(H_e, Zw: Zonotope) -> np.ndarray:
    return np.abs(np.asarray(H_e) @ Zw.G).sum(axis=1)


def _facet_rows(H_e, mdw) -> np.ndarray:
    """(q, s, T) array whose [j, i] row is H_e[j] @ G^i."""
    blocks = mdw.blocks()  # (s, n, T)
    return np.einsum("jn,snt->jst", np.asarray(H_e, dtype=float), blocks)


def _mirror_index(H):
    """For each facet, index of an earlier facet with the opposite normal (or itself)."""
    idx = np.arange(H.shape[0])
    for j in range(H.shape[0]):
        for k in range(j):
            if np.allclose(H[j], -H[k], atol=1e-14):
                idx[j] = k
                break
    return idx


def _abs_max(pdw: CoeffPolytope, d) -> float:
    """max over P_dw of |d . beta|."""
    if not np.any(d):
        return 0.0
    V = pdw.vertices()
    if V is not None:
        return float(np.max(np.abs(V @ d))) if len(V) else 0.0
    return max(pdw.maximize(d)[0], pdw.maximize(-d)[0])


def _l_base(R, pdw: CoeffPolytope, mirror) -> np.ndarray:
    """Per facet, max over P_dw of the l1 norm of sum_i beta_i R[j, i, :].

    Exact over cached vertices; otherwise the coordinate-wise bound
    sum_k max |.|, which can only be larger.
    """
    q = R.shape[0]
    out = np.zeros(q)
    V = pdw.vertices()
    for j in range(q):
        if mirror[j] != j:
            out[j] = out[mirror[j]]
            continue
        if V is not None:
            out[j] = float(np.max(np.abs(V @ R[j]).sum(axis=1))) if len(V) else 0.0
        else:
            out[j] = sum(_abs_max(pdw, R[j][:, k]) for k in range(R.shape[2]))
    return out


def facet_l(H_e, mdw, pdw: CoeffPolytope, M_e: float) -> np.ndarray:
    if M_e == 0:
        return np.zeros(np.asarray(H_e).shape[0])
    H_e = np.atleast_2d(np.asarray(H_e, dtype=float))
    return M_e * _l_base(_facet_rows(H_e, mdw), pdw, _mirror_index(H_e))


def _z(R, pdw, v, mirror) -> np.ndarray:
    q = R.shape[0]
    out = np.zeros(q)
    for j in range(q):
        out[j] = out[mirror[j]] if mirror[j] != j else _abs_max(pdw, R[j] @ v)
    return out


def facet_z(H_e, mdw, pdw: CoeffPolytope, batch: DataBatch, xbar, ubar) -> np.ndarray:
    H_e = np.atleast_2d(np.asarray(H_e, dtype=float))
    v = batch.D0_pinv @ np.concatenate([np.ravel(xbar), np.ravel(ubar)])
    return _z(_facet_rows(H_e, mdw), pdw, v, _mirror_index(H_e))


class TubeGainProblem:
    """Per-scenario data for repeated tube-gain solves.

    The LP is written on the exact error recursion

        e+ = (A_bar + B_bar K) e + dTheta [e; K e] + dTheta [xbar; ubar] + w

    where ``dTheta`` ranges over the model set minus its center.  The middle
    terms are bounded per facet: ``z`` by two support queries, and the
    closed-loop term column-wise by ``sum_c Theta[j, c] |[e; K e]_c|`` with
    ``Theta[j, c] = max |H_e[j] dTheta[:, c]|``.  That keeps the bound linear
    in ``|K|`` and avoids the factor-T loss of bounding through ``|V_K|``.
    Time-invariant pieces (``y``, ``Theta``, facet rows) are computed once.
    """

    def __init__(self, H_e, batch: DataBatch, mdw: ConstrainedMatrixZonotope, Zw: Zonotope,
                 pdw: CoeffPolytope | None = None):
        self.H_e = np.atleast_2d(np.asarray(H_e, dtype=float))
        self.batch, self.mdw, self.Zw = batch, mdw, Zw
        self.pdw = build_pdw(mdw) if pdw is None else pdw
        self.R = _facet_rows(self.H_e, mdw)
        self.mirror = _mirror_index(self.H_e)
        self.y = facet_y(self.H_e, Zw)
        self.Hc = self.H_e @ Zw.c
        center = (batch.X1 - mdw.C) @ batch.D0_pinv
        self.A_bar, self.B_bar = center[:, :batch.n], center[:, batch.n:]
        RP = self.R @ batch.D0_pinv  # (q, s, n+m): H_e[j] G^i D0^+
        self.Theta = np.zeros((self.H_e.shape[0], batch.n + batch.m))
        for j in range(self.H_e.shape[0]):
            if self.mirror[j] != j:
                self.Theta[j] = self.Theta[self.mirror[j]]
                continue
            for c in range(RP.shape[2]):
                self.Theta[j, c] = _abs_max(self.pdw, RP[j][:, c])

    def l_term(self, tube: TubeState, K) -> np.ndarray:
        n = self.batch.n
        r = tube.radius
        return self.Theta[:, :n] @ r + self.Theta[:, n:] @ (np.abs(K) @ r)

    def z(self, xbar, ubar) -> np.ndarray:
        v = self.batch.D0_pinv @ np.concatenate([np.ravel(xbar), np.ravel(ubar)])
        return _z(self.R, self.pdw, v, self.mirror)

    def solve(self, tube: TubeState, xbar, ubar, sigma: float = 1.0, *, lam_max: float = 1 - LAMBDA_EPS,
              lam_min: float = LAMBDA_MIN, input_margin=None, applied_input=None, z=None) -> TubeGainResult:
        """Solve the LP.

        ``input_margin = (H_u, E_ref, s)`` adds, for each row ``H_u[i]``, the
        constraint ``max_{e in E_ref} H_u[i] K e <= s[i]`` (through duals).
        ``applied_input = (H_u, e, s)`` adds ``H_u K e <= s`` for one error.
        ``z`` may be passed when already evaluated at this pair.
        """
        if z is None:
            z = self.z(xbar, ubar)
        lam_min = min(max(lam_min, LAMBDA_MIN), lam_max)
        return _solve(self, tube, z, sigma, lam_max, input_margin, applied_input, lam_min=lam_min)

    def sustainable_scale(self, tube: TubeState, pairs=(), z=None) -> float:
        """Smallest ``mu`` such that ``mu * tube`` is invariant (lam = 1) for some gain.

        The facet offsets of the model term at the nominal pair are taken as the
        max over ``pairs`` (and an explicit ``z``), so one gain covers all of them.  Returns ``inf`` when
        no scale works.  With ``V' = mu V`` and ``P' = mu P`` the problem is an LP.
        """
        zs = [self.z(xb, ub) for xb, ub in pairs] + ([] if z is None else [np.asarray(z, dtype=float)])
        z = np.max(zs, axis=0)
        res = _solve(self, tube, z, 0.0, np.inf, None, None, scale_free=True)
        return res.lam if res.ok else float("inf")


def _solve(pr: TubeGainProblem, tube: TubeState, z, sigma, lam_max, input_margin,
           applied_input=None, lam_min=LAMBDA_MIN, scale_free=False) -> TubeGainResult:
    # scale_free: the "lam" column becomes the tube scale mu (lam fixed at 1),
    # and the gain variables carry a factor mu
    H, h, batch = pr.H_e, tube.h_e, pr.batch
    q, n = H.shape
    T, m = batch.T, batch.m
    r_e = tube.radius
    nP, nV, nK = q * q, T * n, m * n
    iP, iV, iS = 0, nP, nP + nV
    iSK = iS + nV
    irho, ilam = iSK + nK, iSK + nK + 1
    nvar = ilam + 1
    if input_margin is not None:
        Hu, Eref, s_ref = input_margin
        Hu = np.atleast_2d(Hu)
        nu = Hu.shape[0]
        ia = nvar
        nvar += nu * q
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    U0 = batch.U0
    # closed-loop uncertainty: fixed part from the state columns, |K| part as variables
    l_fixed = pr.Theta[:, :n] @ r_e
    WK = pr.Theta[:, n:]  # q x m, multiplies sum_i r_e[i] |K[c', i]|

    # facet recursion: P h - lam h + sum WK[j,c'] r_e[i] SK[c',i] <= -Hc - z - y - l_fixed
    r, c, v = [], [], []
    for j in range(q):
        for k in range(q):
            r.append(j), c.append(iP + j * q + k), v.append(h[k])
        for cp in range(m):
            for i in range(n):
                r.append(j), c.append(iSK + cp * n + i), v.append(WK[j, cp] * r_e[i])
        r.append(j), c.append(ilam), v.append(-h[j] + (l_fixed[j] if scale_free else 0.0))
    A_ub.append(sp.coo_matrix((v, (r, c)), shape=(q, nvar)))
    b_ub.append(-pr.Hc - z - pr.y - (0.0 if scale_free else l_fixed))
    # |V| <= S, row sums <= rho
    def block(rows, cols_vals):
        rr, cc, vv = [], [], []
        for row, items in enumerate(cols_vals):
            for col, val in items:
                rr.append(row), cc.append(col), vv.append(val)
        return sp.coo_matrix((vv, (rr, cc)), shape=(rows, nvar))

    A_ub.append(block(nV, [[(iV + k, 1.0), (iS + k, -1.0)] for k in range(nV)]))
    A_ub.append(block(nV, [[(iV + k, -1.0), (iS + k, -1.0)] for k in range(nV)]))
    b_ub.append(np.zeros(2 * nV))
    A_ub.append(block(T, [[(iS + t * n + cc, 1.0) for cc in range(n)] + [(irho, -1.0)] for t in range(T)]))
    b_ub.append(np.zeros(T))
    # |U0 V| <= SK
    kv = [[(iV + t * n + i, U0[cp, t]) for t in range(T)] for cp in range(m) for i in range(n)]
    A_ub.append(block(nK, [row + [(iSK + k, -1.0)] for k, row in enumerate(kv)]))
    A_ub.append(block(nK, [[(col, -val) for col, val in row] + [(iSK + k, -1.0)] for k, row in enumerate(kv)]))
    b_ub.append(np.zeros(2 * nK))
    # P H = H (A_bar + B_bar U0 V)
    HB = H @ pr.B_bar @ U0  # q x T
    HA = H @ pr.A_bar
    rows = []
    for j in range(q):
        for cc in range(n):
            rows.append([(iP + j * q + k, H[k, cc]) for k in range(q)]
                        + [(iV + t * n + cc, -HB[j, t]) for t in range(T)]
                        + ([(ilam, -HA[j, cc])] if scale_free else []))
    A_eq.append(block(q * n, rows))
    b_eq.append(np.zeros(q * n) if scale_free else HA.reshape(-1))
    # X0 V = I
    A_eq.append(block(n * n, [[(iV + t * n + cc, batch.X0[rr, t]) for t in range(T)]
                               + ([(ilam, -1.0)] if scale_free and rr == cc else [])
                               for rr in range(n) for cc in range(n)]))
    b_eq.append(np.zeros(n * n) if scale_free else np.eye(n).reshape(-1))
    if input_margin is not None:
        HuU = Hu @ U0
        rows = []
        for i in range(nu):
            for cc in range(n):
                rows.append([(ia + i * q + k, Eref.H[k, cc]) for k in range(q)]
                            + [(iV + t * n + cc, -HuU[i, t]) for t in range(T)])
        A_eq.append(block(nu * n, rows))
        b_eq.append(np.zeros(nu * n))
        A_ub.append(block(nu, [[(ia + i * q + k, Eref.h[k]) for k in range(q)] for i in range(nu)]))
        b_ub.append(np.asarray(s_ref, dtype=float))
    if applied_input is not None:
        Hu_a, e_a, s_a = applied_input
        coef = np.atleast_2d(Hu_a) @ U0  # rows x T, times V e
        e_a = np.asarray(e_a, dtype=float)
        A_ub.append(block(coef.shape[0], [[(iV + t * n + cc, coef[i, t] * e_a[cc]) for t in range(T)
                                           for cc in range(n) if e_a[cc] != 0] for i in range(coef.shape[0])]))
        b_ub.append(np.asarray(s_a, dtype=float))
    lb = np.full(nvar, -np.inf)
    ub = np.full(nvar, np.inf)
    lb[iP:iP + nP] = 0.0
    lb[iS:iS + nV] = 0.0
    lb[iSK:iSK + nK] = 0.0
    lb[irho] = 0.0
    lb[ilam], ub[ilam] = (0.0, np.inf) if scale_free else (lam_min, lam_max)
    if input_margin is not None:
        lb[ia:] = 0.0
    cost = np.zeros(nvar)
    cost[irho] = 1e-6 if scale_free else 1.0
    cost[ilam] = 1.0 if scale_free else sigma
    prob = LpProblem(cost, sp.vstack(A_ub).tocsr(), np.concatenate(b_ub),
                     sp.vstack(A_eq).tocsr(), np.concatenate(b_eq), lb, ub)
    res = solve_lp(prob)
    if scale_free:
        return TubeGainResult(res.status, None, float(res.x[ilam]) if res.ok else float("nan"),
                              FacetBounds(pr.y.copy(), np.full(q, np.nan), z), res.objective)
    if not res.ok or lam_max < LAMBDA_MIN:
        return TubeGainResult(res.status if not res.ok else Status.INFEASIBLE, None, float("nan"),
                              FacetBounds(pr.y.copy(), np.full(q, np.nan), z))
    x = res.x
    V = x[iV:iV + nV].reshape(T, n)
    P = np.maximum(x[iP:iP + nP].reshape(q, q), 0.0)
    K = U0 @ V
    l = l_fixed + WK @ (np.abs(K) @ r_e)
    gain = GainParam(V, K, float(x[irho]), P)
    return TubeGainResult(Status.OPTIMAL, gain, float(x[ilam]), FacetBounds(pr.y.copy(), l, z), res.objective)


def solve_tube_gain(tube: TubeState, batch: DataBatch, mdw, pdw, Zw: Zonotope, xbar, ubar,
                    sigma: float = 1.0, **kwargs) -> TubeGainResult:
    return TubeGainProblem(tube.H_e, batch, mdw, Zw, pdw).solve(tube, xbar, ubar, sigma, **kwargs)


def update_tube(tube: TubeState, lam: float) -> TubeState:
    if not 0 < lam <= 1:
        raise ValueError(f"contraction factor {lam} outside (0, 1]")
    # the tube contains the origin, so its extent scales with the offsets
    new = TubeState(tube.H_e, lam * tube.h_e, lam, lam * tube.M_e)
    object.__setattr__(new, "_radius", lam * tube.radius)
    return new


def error_set_next(e, xbar, ubar, gain: GainParam, batch: DataBatch, mdw, Zw: Zonotope) -> ConstrainedZonotope:
    """Set of one-step errors ``e+`` from error ``e`` at the nominal pair.

    Coefficients are ``[beta; beta'; eta]`` with ``beta = beta'`` enforced, so the
    closed-loop and mismatch terms share one disturbance realisation.
    """
    e = np.asarray(e, dtype=float).reshape(-1)
    v = batch.D0_pinv @ np.concatenate([np.ravel(xbar), np.ravel(ubar)])
    blocks = mdw.blocks()
    s = len(blocks)
    Ve = gain.V_K @ e
    G1 = -np.einsum("snt,t->ns", blocks, Ve) if s else np.zeros((batch.n, 0))
    G2 = -np.einsum("snt,t->ns", blocks, v) if s else np.zeros((batch.n, 0))
    G = np.hstack([G1, G2, Zw.G])
    c = (batch.X1 - mdw.C) @ Ve + Zw.c
    Af, bf = mdw.eq_flat()
    sw = Zw.n_gen
    A = np.vstack([
        np.hstack([Af, np.zeros_like(Af), np.zeros((Af.shape[0], sw))]),
        np.hstack([np.eye(s), -np.eye(s), np.zeros((s, sw))]),
    ])
    b = np.concatenate([bf, np.zeros(s)])
    return ConstrainedZonotope(G, c, A, b, check=False)


def next_error_samples(problem: TubeGainProblem, tube: TubeState, gain: GainParam, xbar, ubar, k: int, rng,
                       beta=None):
    """Sampled ``(e, e+)`` pairs of the exact one-step error recursion.

    ``e`` is drawn from the tube (its vertices first), the disturbance data
    realisation ``W = C + sum_i beta_i G^i`` from the coefficient polytope and
    the new disturbance from ``Zw``:

        e+ = (X1 - W) V_K e - (W - C) D0^+ [xbar; ubar] + w

    A pool ``beta`` (rows of coefficients) may be passed to reuse samples.
    """
    batch, mdw, Zw = problem.batch, problem.mdw, problem.Zw
    E = tube.polytope
    e = sample_polytope(E, rng, k)
    V = vertices(E)
    if V is not None:
        e[: min(len(V), k)] = V[:k]
    if beta is None:
        beta = problem.pdw.sample_many(k, rng)
    beta = beta[rng.integers(0, len(beta), k)] if len(beta) != k else beta
    blocks = mdw.blocks()  # (s, n, T)
    v = batch.D0_pinv @ np.concatenate([np.ravel(xbar), np.ravel(ubar)])
    Acl = (batch.X1 - mdw.C) @ gain.V_K
    GV = np.einsum("snt,tc->snc", blocks, gain.V_K)
    Gv = np.einsum("snt,t->sn", blocks, v)
    w = Zw.c + rng.uniform(-1.0, 1.0, (k, Zw.n_gen)) @ Zw.G.T
    e_plus = e @ Acl.T - np.einsum("ks,snc,kc->kn", beta, GV, e) - beta @ Gv + w
    return e, e_plus


def contraction_violations(problem: TubeGainProblem, tube: TubeState, result: TubeGainResult, xbar, ubar,
                           k: int = 10_000, rng=None, tol: float = 1e-6, beta=None) -> int:
    """Number of sampled ``e+`` with ``H_e e+ > lam h_e + tol``."""
    rng = np.random.default_rng() if rng is None else rng
    _, ep = next_error_samples(problem, tube, result.gain, xbar, ubar, k, rng, beta)
    return int(np.sum(np.any(ep @ tube.H_e.T > result.lam * tube.h_e + tol, axis=1)))


def lyapunov_value(e, tube: TubeState) -> float:
    e = np.asarray(e, dtype=float)
    return float(np.max(tube.H_e @ e / tube.h_e))


def mismatch_bound_over_box(H_e, mol_c: ConstrainedMatrixZonotope, pdw: CoeffPolytope, X: Polytope,
                            U: Polytope) -> np.ndarray:
    """Per facet, max over models and (x, u) in X x U of |H_e[j] (theta - center) [x; u]|.

    The product set is enumerated by vertices; for each vertex the inner max is
    a support query over the coefficient polytope.
    """
    H_e = np.atleast_2d(np.asarray(H_e, dtype=float))
    VX, VU = vertices(X), vertices(U)
    if VX is None or VU is None:
        raise ValueError("admissible sets too large for vertex enumeration")
    blocks = mol_c.blocks()  # (s, n, n+m)
    R = np.einsum("jn,snc->jsc", H_e, blocks)  # (q, s, n+m)
    mirror = _mirror_index(H_e)
    pts = np.array([np.concatenate([a, b]) for a in VX for b in VU])
    # |.| is even, so one of each +/- pair of product vertices suffices
    keep = []
    seen = set()
    for i, p in enumerate(pts):
        key = tuple(np.round(p, 12))
        if tuple(np.round(-p, 12)) in seen:
            continue
        seen.add(key)
        keep.append(i)
    pts = pts[keep]
    out = np.zeros(H_e.shape[0])
    for j in range(H_e.shape[0]):
        if mirror[j] != j:
            out[j] = out[mirror[j]]
            continue
        out[j] = max(_abs_max(pdw, R[j] @ p) for p in pts)
    return out


def gamma_compare(tube: TubeState, mdw, pdw, batch: DataBatch, Zw: Zonotope, X: Polytope, U: Polytope,
                  xbar, ubar, gain: GainParam, mol_c=None, F=None, problem: TubeGainProblem | None = None):
    """Closed-loop vs open-loop facet offsets; returns (gamma_cl, gamma_ol, gamma_cl < gamma_ol)."""
    pr = problem if problem is not None else TubeGainProblem(tube.H_e, batch, mdw, Zw, pdw)
    H = tube.H_e
    if F is None:
        if mol_c is None:
            mol_c = refined_open_loop_set(batch, mdw)[0]
        F = mismatch_bound_over_box(H, mol_c, pr.pdw, X, U)
    g_cl = pr.Hc + pr.l_term(tube, gain.K) + pr.z(xbar, ubar) + pr.y
    g_ol = pr.Hc + F + pr.y
    return g_cl, g_ol, g_cl < g_ol

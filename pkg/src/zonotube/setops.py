"""Set representations and set computations.

Zonotopes ``<G, c>``, constrained zonotopes ``<G, c, A, b>``, (constrained)
matrix zonotopes, H-polytopes ``{x : Hx <= h}`` and interval boxes.  Matrix
zonotopes store their generators as one wide matrix ``[G^1 ... G^s]`` of
``n x m`` blocks; equality constraints stay block-wise and are vectorised
column-major on demand.

All set values are treated as immutable after construction.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import highspy
import numpy as np
import scipy.sparse as sp

from . import optim
from .optim import LpProblem, Status, solve_lp

__all__ = [
    "EmptySetError",
    "Zonotope",
    "ConstrainedZonotope",
    "MatrixZonotope",
    "ConstrainedMatrixZonotope",
    "Polytope",
    "IntervalBox",
    "CoeffPolytope",
    "vec",
    "minkowski_sum",
    "linear_map",
    "block_right_multiply",
    "concat_disturbance",
    "support",
    "support_cz",
    "interval_enclosure",
    "inf_norm_bound",
    "vertices",
    "membership",
    "sample",
    "sample_polytope",
    "compact",
    "to_json",
    "from_json",
    "VERTEX_CAP",
]

# vertex enumeration is attempted only below these sizes
VERTEX_CAP = {"dim": 12, "vertices": 4096, "combinations": 250_000}


class EmptySetError(ValueError):
    """Raised when a constrained set turns out to be empty."""


def vec(X) -> np.ndarray:
    """Column-wise vectorisation."""
    return np.asarray(X, dtype=float).reshape(-1, order="F")


def _f(a, ndim):
    a = np.asarray(a, dtype=float)
    if ndim == 1:
        return a.reshape(-1)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if a.size else a.reshape(0, 0)
    return a


# ---------------------------------------------------------------------------
# coefficient polytopes  {z : A z = b, |z|_inf <= 1}
# ---------------------------------------------------------------------------


def _compress_equalities(A, b, s):
    """Orthonormal row basis of ``A z = b``; raises EmptySetError if inconsistent."""
    A = np.asarray(A, dtype=float).reshape(-1, s)
    b = np.asarray(b, dtype=float).reshape(-1)
    scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    keep = np.any(A != 0, axis=1)
    if np.max(np.abs(b[~keep]), initial=0.0) > 1e-7 * scale:
        raise EmptySetError("equality 0 = b with b != 0")
    A, b = A[keep], b[keep]
    if A.shape[0] == 0:
        return np.zeros((0, s)), np.zeros(0)
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(S > 1e-10 * S[0])) if S.size and S[0] > 0 else 0
    Ur = U[:, :r]
    resid = b - Ur @ (Ur.T @ b)
    if np.max(np.abs(resid), initial=0.0) > 1e-7 * scale:
        raise EmptySetError("inconsistent equality constraints")
    return Vt[:r].copy(), (Ur.T @ b) / S[:r]


class CoeffPolytope:
    """The coefficient set ``{z in R^s : A z = b, |z|_inf <= 1}``.

    Equalities are compressed to an orthonormal row basis.  Support queries go
    through one persistent HiGHS model whose objective is swapped per query;
    the model is private to the instance.
    """

    def __init__(self, A_eq, b_eq, s: int, check: bool = True):
        self.s = int(s)
        if np.size(A_eq):
            self.A, self.b = _compress_equalities(A_eq, b_eq, self.s)
        else:
            self.A, self.b = np.zeros((0, self.s)), np.zeros(0)
        self._model = None
        self._vertices = None
        self._vertices_tried = False
        if check and not self.is_nonempty():
            raise EmptySetError("coefficient polytope is empty")

    @property
    def n_eq(self) -> int:
        return self.A.shape[0]

    def _highs(self):
        if self._model is None:
            h = highspy.Highs()
            h.setOptionValue("output_flag", False)
            h.setOptionValue("threads", 1)
            h.setOptionValue("primal_feasibility_tolerance", 1e-9)
            h.setOptionValue("dual_feasibility_tolerance", 1e-9)
            h.addVars(self.s, -np.ones(self.s), np.ones(self.s))
            if self.n_eq:
                M = sp.csr_matrix(self.A)
                h.addRows(self.n_eq, self.b, self.b, M.nnz, M.indptr.astype(np.int32),
                          M.indices.astype(np.int32), M.data)
            self._model = h
        return self._model

    def maximize(self, d) -> tuple[float, np.ndarray]:
        d = np.asarray(d, dtype=float).reshape(-1)
        if self.n_eq == 0:
            z = np.sign(d)
            return float(np.abs(d).sum()), z
        h = self._highs()
        h.changeColsCost(self.s, np.arange(self.s, dtype=np.int32), -d)
        h.run()
        if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
            # retry from scratch before giving up
            h.clearSolver()
            h.run()
            if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
                raise EmptySetError(f"support LP failed: {h.getModelStatus()}")
        z = np.clip(np.array(h.getSolution().col_value), -1.0, 1.0)
        return float(d @ z), z

    def support(self, d) -> float:
        if self._vertices is not None:
            return float(np.max(self._vertices @ np.asarray(d, dtype=float)))
        return self.maximize(d)[0]

    def support_lp(self, d) -> float:
        return self.maximize(d)[0]

    def is_nonempty(self) -> bool:
        if self.n_eq == 0:
            return True
        p = LpProblem(np.zeros(self.s), A_eq=self.A, b_eq=self.b, lb=-np.ones(self.s), ub=np.ones(self.s))
        return optim.phase_one(p) <= optim.TOL.primal * 10

    def contains(self, z, tol: float = 1e-8) -> bool:
        z = np.asarray(z, dtype=float).reshape(-1)
        if np.max(np.abs(z)) > 1 + tol:
            return False
        return self.n_eq == 0 or float(np.max(np.abs(self.A @ z - self.b))) <= tol

    def project(self, z) -> np.ndarray:
        """Closest member in the inf-norm (feasibility-restoration LP)."""
        z = np.asarray(z, dtype=float).reshape(-1)
        if self.n_eq == 0:
            return np.clip(z, -1, 1)
        s = self.s
        I = np.eye(s)
        A_ub = np.vstack([np.hstack([I, -np.ones((s, 1))]), np.hstack([-I, -np.ones((s, 1))])])
        b_ub = np.concatenate([z, -z])
        c = np.zeros(s + 1)
        c[-1] = 1.0
        res = solve_lp(LpProblem(c, A_ub, b_ub, np.hstack([self.A, np.zeros((self.n_eq, 1))]), self.b,
                                 lb=np.concatenate([-np.ones(s), [0.0]]),
                                 ub=np.concatenate([np.ones(s), [np.inf]])))
        if not res.ok:
            raise EmptySetError("projection onto the coefficient polytope failed")
        return np.clip(res.x[:s], -1, 1)

    def sample(self, rng) -> np.ndarray:
        return self.project(rng.uniform(-1.0, 1.0, self.s))

    def center(self) -> np.ndarray:
        """Point maximizing the distance to the box faces within the equalities."""
        if self.n_eq == 0:
            return np.zeros(self.s)
        s = self.s
        I, one = np.eye(s), np.ones((s, 1))
        c = np.zeros(s + 1)
        c[-1] = -1.0
        res = solve_lp(LpProblem(c, np.vstack([np.hstack([I, one]), np.hstack([-I, one])]), np.ones(2 * s),
                                 np.hstack([self.A, np.zeros((self.n_eq, 1))]), self.b,
                                 lb=np.concatenate([-np.ones(s), [0.0]]), ub=np.concatenate([np.ones(s), [1.0]])))
        if not res.ok:
            raise EmptySetError("coefficient polytope is empty")
        return res.x[:s]

    def sample_many(self, k: int, rng, steps: int = 40) -> np.ndarray:
        """``k`` points from ``k`` parallel hit-and-run chains started at the center."""
        if self.n_eq == 0:
            return rng.uniform(-1.0, 1.0, (k, self.s))
        N = _null_space(self.A, self.s)
        X = np.tile(self.center(), (k, 1))
        if N.shape[1] == 0:
            return X
        for _ in range(steps):
            d = rng.standard_normal((k, N.shape[1]))
            D = d @ N.T
            sg = np.where(D >= 0, 1.0, -1.0)
            Ds = np.where(np.abs(D) < 1e-14, 1e-14 * sg, D)
            tmax = np.maximum(np.min((sg - X) / Ds, axis=1), 0.0)
            tmin = np.minimum(np.max((-sg - X) / Ds, axis=1), 0.0)
            X = X + rng.uniform(tmin, tmax)[:, None] * D
        return np.clip(X, -1.0, 1.0)

    def vertices(self):
        """Vertex array (k x s) or None when the enumeration cap is exceeded."""
        if not self._vertices_tried:
            self._vertices_tried = True
            self._vertices = _enumerate_box_slice(self.A, self.b, self.s)
        return self._vertices

    def cache_vertices(self) -> bool:
        return self.vertices() is not None


def _null_space(A, s):
    if A.shape[0] == 0:
        return np.eye(s)
    _, S, Vt = np.linalg.svd(A, full_matrices=True)
    r = int(np.sum(S > 1e-10 * S[0])) if S.size else 0
    return Vt[r:].T


def _enumerate_box_slice(A, b, s):
    if A.shape[0] == 0:
        if s > VERTEX_CAP["dim"] or 2**s > VERTEX_CAP["vertices"]:
            return None
        return np.array(list(itertools.product([-1.0, 1.0], repeat=s))).reshape(-1, s)
    x0 = np.linalg.lstsq(A, b, rcond=None)[0]
    N = _null_space(A, s)
    d = N.shape[1]
    if d == 0:
        return x0.reshape(1, -1) if np.max(np.abs(x0)) <= 1 + 1e-9 else np.zeros((0, s))
    H = np.vstack([N, -N])
    h = np.concatenate([1 - x0, 1 + x0])
    verts = _enumerate_hrep(H, h)
    if verts is None:
        return None
    return x0 + verts @ N.T


def _enumerate_hrep(H, h, tol=1e-9):
    """Brute-force vertex enumeration of {x : Hx <= h}; None when over the cap."""
    q, n = H.shape
    if n == 0:
        return np.zeros((1, 0))
    if n > VERTEX_CAP["dim"] and math.comb(q, n) > VERTEX_CAP["combinations"]:
        return None
    if math.comb(q, n) > VERTEX_CAP["combinations"]:
        return None
    combos = np.array(list(itertools.combinations(range(q), n)), dtype=int)
    if combos.size == 0:
        return np.zeros((0, n))
    out = []
    for chunk in np.array_split(combos, max(1, len(combos) // 20000)):
        M = H[chunk]  # (k, n, n)
        rhs = h[chunk]
        det = np.linalg.det(M)
        ok = np.abs(det) > 1e-12
        if not np.any(ok):
            continue
        xs = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
        feas = np.all(xs @ H.T <= h + tol * (1 + np.abs(h)), axis=1)
        out.append(xs[feas])
    if not out:
        return np.zeros((0, n))
    V = np.vstack(out)
    V = _dedupe(V)
    if len(V) > VERTEX_CAP["vertices"]:
        return None
    return V


def _dedupe(V, tol=1e-9):
    if len(V) == 0:
        return V
    keys = np.round(V / tol).astype(np.int64) if tol > 0 else V
    _, idx = np.unique(keys, axis=0, return_index=True)
    V = V[np.sort(idx)]
    # second pass for points straddling a rounding boundary
    keep = []
    for v in V:
        if not any(np.max(np.abs(v - w)) <= tol for w in keep):
            keep.append(v)
    return np.array(keep)


# ---------------------------------------------------------------------------
# set types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Zonotope:
    c: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        c = _f(self.c, 1)
        G = np.asarray(self.G, dtype=float)
        if G.size == 0:
            G = np.zeros((c.size, 0))
        G = G.reshape(c.size, -1)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(G))):
            raise ValueError("zonotope entries must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "G", G)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def n_gen(self) -> int:
        return self.G.shape[1]

    def support(self, d) -> float:
        d = np.asarray(d, dtype=float)
        return float(d @ self.c + np.abs(self.G.T @ d).sum())

    def scaled(self, a: float) -> "Zonotope":
        return Zonotope(a * self.c, a * self.G)


class ConstrainedZonotope:
    """``{c + G z : A z = b, |z|_inf <= 1}``; emptiness is checked on construction."""

    def __init__(self, G, c, A=None, b=None, check: bool = True):
        self.c = _f(c, 1)
        G = np.asarray(G, dtype=float)
        self.G = G.reshape(self.c.size, -1) if G.size else np.zeros((self.c.size, 0))
        s = self.G.shape[1]
        self.A = np.zeros((0, s)) if A is None or np.size(A) == 0 else np.asarray(A, dtype=float).reshape(-1, s)
        self.b = np.zeros(0) if b is None or np.size(b) == 0 else _f(b, 1)
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b row counts differ")
        self.coeffs = CoeffPolytope(self.A, self.b, s, check=check)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def n_gen(self) -> int:
        return self.G.shape[1]


class MatrixZonotope:
    """``{C + sum_i G^i z_i : |z|_inf <= 1}`` with ``n x m`` blocks G^i."""

    def __init__(self, C, G):
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        n, m = self.C.shape
        G = np.asarray(G, dtype=float)
        self.G = G.reshape(n, -1) if G.size else np.zeros((n, 0))
        if m == 0 or self.G.shape[1] % m:
            raise ValueError("generator width must be a multiple of the block width")

    @property
    def shape(self):
        return self.C.shape

    @property
    def n_gen(self) -> int:
        return self.G.shape[1] // self.C.shape[1]

    def block(self, i) -> np.ndarray:
        m = self.C.shape[1]
        return self.G[:, i * m:(i + 1) * m]

    def blocks(self) -> np.ndarray:
        """Generator blocks as an (s, n, m) array."""
        n, m = self.C.shape
        return self.G.reshape(n, self.n_gen, m).transpose(1, 0, 2)

    def vec_generators(self) -> np.ndarray:
        """(n*m) x s matrix whose column i is vec(G^i)."""
        return np.stack([vec(B) for B in self.blocks()], axis=1) if self.n_gen else np.zeros((self.C.size, 0))

    def eq_flat(self):
        return np.zeros((0, self.n_gen)), np.zeros(0)

    @property
    def coeffs(self) -> CoeffPolytope:
        if not hasattr(self, "_coeffs"):
            self._coeffs = CoeffPolytope(*self.eq_flat(), self.n_gen)
        return self._coeffs

    def point(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        return self.C + np.tensordot(z, self.blocks(), axes=1) if self.n_gen else self.C.copy()


class ConstrainedMatrixZonotope(MatrixZonotope):
    """Matrix zonotope with block equalities ``sum_i A^i z_i = B``.

    ``A`` is ``n_c x (m_c * s)`` (blocks A^i of size ``n_c x m_c``) and ``B`` is
    ``n_c x m_c``.  An empty ``B`` means no constraints.
    """

    def __init__(self, C, G, A=None, B=None, check: bool = True):
        super().__init__(C, G)
        s = self.n_gen
        if B is None or np.size(B) == 0:
            self.B = np.zeros((0, 0))
            self.A = np.zeros((0, 0))
        else:
            self.B = np.atleast_2d(np.asarray(B, dtype=float))
            mc = self.B.shape[1]
            self.A = np.asarray(A, dtype=float).reshape(self.B.shape[0], mc * s)
        self._coeffs = CoeffPolytope(*self.eq_flat(), s, check=check)

    @property
    def m_c(self) -> int:
        return self.B.shape[1]

    def constraint_blocks(self) -> np.ndarray:
        nc, mc = self.B.shape
        if nc == 0 or mc == 0:
            return np.zeros((self.n_gen, 0, 0))
        return self.A.reshape(nc, self.n_gen, mc).transpose(1, 0, 2)

    def eq_flat(self):
        nc, mc = self.B.shape
        s = self.n_gen
        if nc == 0 or mc == 0:
            return np.zeros((0, s)), np.zeros(0)
        Af = np.stack([vec(Ai) for Ai in self.constraint_blocks()], axis=1)
        return Af, vec(self.B)


@dataclass(frozen=True, eq=False)
class Polytope:
    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = _f(self.h, 1)
        if H.shape[0] != h.size:
            raise ValueError("H and h row counts differ")
        if not np.all(np.isfinite(h)):
            raise ValueError("h must be finite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @classmethod
    def box(cls, lower, upper) -> "Polytope":
        lower, upper = _f(lower, 1), _f(upper, 1)
        n = lower.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.H @ x <= self.h + tol))

    def scaled(self, a: float) -> "Polytope":
        return Polytope(self.H, a * self.h)

    def translated(self, t) -> "Polytope":
        return Polytope(self.H, self.h + self.H @ np.asarray(t, dtype=float))

    def support(self, d) -> float:
        return support(self, d)

    def is_empty(self) -> bool:
        p = LpProblem(np.zeros(self.n), self.H, self.h)
        return optim.phase_one(p) > optim.TOL.primal * (1 + np.abs(self.h).max(initial=0.0))


@dataclass(frozen=True, eq=False)
class IntervalBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, up = _f(self.lower, 1), _f(self.upper, 1)
        if lo.shape != up.shape or np.any(lo > up + 1e-12):
            raise ValueError("interval box requires lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def minkowski_sum(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    if Z1.n != Z2.n:
        raise ValueError(f"dimension mismatch: {Z1.n} vs {Z2.n}")
    return Zonotope(Z1.c + Z2.c, np.hstack([Z1.G, Z2.G]))


def linear_map(M, Z: Zonotope) -> Zonotope:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != Z.n:
        raise ValueError(f"map has {M.shape[1]} columns, zonotope has dimension {Z.n}")
    return Zonotope(M @ Z.c, M @ Z.G)


def block_right_multiply(Mz: MatrixZonotope, Q):
    """``<G o Q, C Q, A, B>`` where ``G o Q = G (I_s kron Q)``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n, m = Mz.C.shape
    if Q.shape[0] != m:
        raise ValueError(f"blocks have {m} columns, Q has {Q.shape[0]} rows")
    G = np.hstack([B @ Q for B in Mz.blocks()]) if Mz.n_gen else np.zeros((n, 0))
    if isinstance(Mz, ConstrainedMatrixZonotope):
        return ConstrainedMatrixZonotope(Mz.C @ Q, G, Mz.A, Mz.B, check=False)
    return MatrixZonotope(Mz.C @ Q, G)


def concat_disturbance(Zw: Zonotope, T: int) -> MatrixZonotope:
    """Matrix zonotope of ``n x T`` disturbance sequences with columns in ``Zw``.

    Block ``j * s_w + i`` carries generator ``i`` of ``Zw`` in column ``j``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    n, sw = Zw.n, Zw.n_gen
    C = np.tile(Zw.c[:, None], (1, T))
    blocks = np.zeros((T * sw, n, T))
    for j in range(T):
        for i in range(sw):
            blocks[j * sw + i, :, j] = Zw.G[:, i]
    G = blocks.transpose(1, 0, 2).reshape(n, T * sw * T) if T * sw else np.zeros((n, 0))
    return MatrixZonotope(C, G)


def support(P: Polytope, d) -> float:
    """``max d.x over P``; raises on unbounded or empty P."""
    d = np.asarray(d, dtype=float).reshape(-1)
    res = solve_lp(LpProblem(-d, P.H, P.h))
    if res.status is Status.UNBOUNDED:
        raise ValueError("polytope unbounded along the direction")
    if not res.ok:
        raise EmptySetError(f"support LP: {res.status.value}")
    return -res.objective


def support_cz(Z, d) -> float:
    """Support function of a (constrained) zonotope."""
    d = np.asarray(d, dtype=float).reshape(-1)
    if isinstance(Z, Zonotope):
        return Z.support(d)
    return float(d @ Z.c) + Z.coeffs.support_lp(Z.G.T @ d)


def interval_enclosure(P: Polytope) -> IntervalBox:
    n = P.n
    lo, up = np.empty(n), np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        up[i] = support(P, e)
        lo[i] = -support(P, -e)
    return IntervalBox(lo, np.maximum(up, lo))


def inf_norm_bound(P: Polytope) -> float:
    box = interval_enclosure(P)
    return float(np.max(np.maximum(np.abs(box.lower), np.abs(box.upper))))


def vertices(P: Polytope):
    """Vertices of a bounded H-polytope, or None above the enumeration cap."""
    return _enumerate_hrep(P.H, P.h)


def _coef_residual(Gv, target, cp: CoeffPolytope) -> float:
    """min over members z of max |Gv z - target| (inf-norm residual)."""
    s = Gv.shape[1]
    k = target.size
    if s == 0:
        return float(np.max(np.abs(target), initial=0.0))
    c = np.zeros(s + 1)
    c[-1] = 1.0
    one = -np.ones((k, 1))
    A_ub = np.vstack([np.hstack([Gv, one]), np.hstack([-Gv, one])])
    b_ub = np.concatenate([target, -target])
    A_eq = np.hstack([cp.A, np.zeros((cp.n_eq, 1))])
    res = solve_lp(LpProblem(c, A_ub, b_ub, A_eq, cp.b, lb=np.concatenate([-np.ones(s), [0.0]]),
                             ub=np.concatenate([np.ones(s), [np.inf]])))
    if not res.ok:
        return float("inf")
    return float(res.x[-1])


def membership(S, x, tol: float | None = None) -> bool:
    """True iff ``x`` belongs to ``S`` within ``tol`` (scaled by the data magnitude)."""
    tol = optim.TOL.primal if tol is None else tol
    if isinstance(S, Polytope):
        x = np.asarray(x, dtype=float).reshape(-1)
        return S.contains(x, tol * (1 + np.abs(S.h).max(initial=0.0)))
    if isinstance(S, IntervalBox):
        return S.contains(x, tol)
    if isinstance(S, Zonotope):
        cp, Gv, c = CoeffPolytope(np.zeros((0, S.n_gen)), np.zeros(0), S.n_gen), S.G, S.c
    elif isinstance(S, ConstrainedZonotope):
        cp, Gv, c = S.coeffs, S.G, S.c
    elif isinstance(S, MatrixZonotope):
        cp, Gv, c = S.coeffs, S.vec_generators(), vec(S.C)
    else:
        raise TypeError(f"unsupported set type {type(S).__name__}")
    target = vec(x) - c
    if target.size != Gv.shape[0]:
        raise ValueError("dimension mismatch in membership query")
    scale = 1.0 + max(float(np.max(np.abs(target), initial=0.0)), float(np.max(np.abs(Gv), initial=0.0)))
    return _coef_residual(Gv, target, cp) <= tol * scale


def sample(S, rng) -> np.ndarray:
    """One member of a zonotope-type set (coefficients drawn uniformly, then restored)."""
    if isinstance(S, Zonotope):
        return S.c + S.G @ rng.uniform(-1.0, 1.0, S.n_gen)
    if isinstance(S, ConstrainedZonotope):
        return S.c + S.G @ S.coeffs.sample(rng)
    if isinstance(S, MatrixZonotope):
        return S.point(S.coeffs.sample(rng))
    raise TypeError(f"unsupported set type {type(S).__name__}")


def sample_polytope(P: Polytope, rng, k: int, box: IntervalBox | None = None) -> np.ndarray:
    """k points from a bounded polytope: rejection from the interval box, hit-and-run as fallback."""
    box = interval_enclosure(P) if box is None else box
    out = []
    tries = 0
    while len(out) < k and tries < 20:
        X = rng.uniform(box.lower, box.upper, size=(max(2 * (k - len(out)), 64), P.n))
        ok = np.all(X @ P.H.T <= P.h + 1e-12, axis=1)
        out.extend(X[ok][: k - len(out)])
        tries += 1
    if len(out) < k:
        out.extend(_hit_and_run(P, rng, k - len(out), 0.5 * (box.lower + box.upper)))
    return np.array(out[:k]).reshape(k, P.n)


def _hit_and_run(P, rng, k, x):
    pts = []
    for _ in range(k * 5):
        d = rng.standard_normal(P.n)
        d /= np.linalg.norm(d)
        Hd = P.H @ d
        slack = P.h - P.H @ x
        with np.errstate(divide="ignore"):
            t = slack / Hd
        tmax = np.min(t[Hd > 1e-14], initial=0.0)
        tmin = np.max(t[Hd < -1e-14], initial=0.0)
        x = x + rng.uniform(tmin, tmax) * d
        pts.append(x.copy())
    return pts[4::5][:k]


def compact(Z):
    """Drop all-zero generator columns (only for sets whose indexing is not shared)."""
    if isinstance(Z, Zonotope):
        keep = np.any(Z.G != 0, axis=0)
        return Zonotope(Z.c, Z.G[:, keep])
    if isinstance(Z, ConstrainedZonotope):
        keep = np.any(Z.G != 0, axis=0) | np.any(Z.A != 0, axis=0)
        return ConstrainedZonotope(Z.G[:, keep], Z.c, Z.A[:, keep], Z.b)
    raise TypeError("compact supports zonotopes and constrained zonotopes")


# ---------------------------------------------------------------------------
# JSON schema: center, generators, eq_A, eq_b, H, h
# ---------------------------------------------------------------------------


def to_json(S) -> dict:
    if isinstance(S, Zonotope):
        return {"type": "zonotope", "center": S.c.tolist(), "generators": S.G.tolist()}
    if isinstance(S, ConstrainedZonotope):
        return {"type": "constrained_zonotope", "center": S.c.tolist(), "generators": S.G.tolist(),
                "eq_A": S.A.tolist(), "eq_b": S.b.tolist()}
    if isinstance(S, ConstrainedMatrixZonotope):
        return {"type": "constrained_matrix_zonotope", "center": S.C.tolist(), "generators": S.G.tolist(),
                "eq_A": S.A.tolist(), "eq_b": S.B.tolist()}
    if isinstance(S, MatrixZonotope):
        return {"type": "matrix_zonotope", "center": S.C.tolist(), "generators": S.G.tolist()}
    if isinstance(S, Polytope):
        return {"type": "polytope", "H": S.H.tolist(), "h": S.h.tolist()}
    if isinstance(S, IntervalBox):
        return {"type": "interval_box", "lower": S.lower.tolist(), "upper": S.upper.tolist()}
    raise TypeError(f"unsupported set type {type(S).__name__}")


def from_json(d):
    if isinstance(d, str):
        d = json.loads(d)
    kind = d["type"]
    if kind == "zonotope":
        c = np.asarray(d["center"], dtype=float)
        return Zonotope(c, np.asarray(d["generators"], dtype=float).reshape(c.size, -1))
    if kind == "constrained_zonotope":
        c = np.asarray(d["center"], dtype=float)
        G = np.asarray(d["generators"], dtype=float).reshape(c.size, -1)
        return ConstrainedZonotope(G, c, np.asarray(d["eq_A"], dtype=float).reshape(-1, G.shape[1]), d["eq_b"])
    if kind == "matrix_zonotope":
        C = np.atleast_2d(np.asarray(d["center"], dtype=float))
        return MatrixZonotope(C, np.asarray(d["generators"], dtype=float).reshape(C.shape[0], -1))
    if kind == "constrained_matrix_zonotope":
        C = np.atleast_2d(np.asarray(d["center"], dtype=float))
        B = np.asarray(d["eq_b"], dtype=float)
        A = np.asarray(d["eq_A"], dtype=float)
        return ConstrainedMatrixZonotope(C, np.asarray(d["generators"], dtype=float).reshape(C.shape[0], -1),
                                         A if B.size else None, B if B.size else None)
    if kind == "polytope":
        return Polytope(np.asarray(d["H"], dtype=float), np.asarray(d["h"], dtype=float))
    if kind == "interval_box":
        return IntervalBox(d["lower"], d["upper"])
    raise ValueError(f"unknown set type {kind!r}")

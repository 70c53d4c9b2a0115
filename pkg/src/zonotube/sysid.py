"""Set-valued identification from a short input-state batch.

Given data ``X1 = A X0 + B U0 + W0`` with ``W0`` in a matrix zonotope, build the
disturbance sets consistent with the data (and optionally a prior on
``[A B]``) and the resulting open- and closed-loop model sets.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .setops import (
    ConstrainedMatrixZonotope,
    EmptySetError,
    MatrixZonotope,
    Zonotope,
    concat_disturbance,
)

log = logging.getLogger(__name__)

__all__ = [
    "DataBatch",
    "ModelSets",
    "Excitation",
    "RankDeficientError",
    "collect_batch",
    "open_loop_set",
    "refine_disturbance_data",
    "prior_disturbance_set",
    "intersect_disturbance",
    "refined_open_loop_set",
    "closed_loop_set",
    "build_prior_from_offline",
    "build_model_sets",
    "exact_prior",
]

RANK_CUTOFF = 1e-10


class RankDeficientError(ValueError):
    """The stacked data matrix does not have full row rank."""


def _svd_split(D0):
    U, S, Vt = np.linalg.svd(D0, full_matrices=True)
    r = int(np.sum(S > RANK_CUTOFF * S[0])) if S.size and S[0] > 0 else 0
    return U, S, Vt, r


@dataclass(frozen=True, eq=False)
class DataBatch:
    """Data matrices of one experiment; ``W0`` is the true disturbance if known."""

    X0: np.ndarray
    X1: np.ndarray
    U0: np.ndarray
    W0: np.ndarray | None = None
    D0: np.ndarray = field(init=False)
    D0_pinv: np.ndarray = field(init=False)
    D0_kernel: np.ndarray = field(init=False)

    def __post_init__(self):
        X0 = np.atleast_2d(np.asarray(self.X0, dtype=float))
        X1 = np.atleast_2d(np.asarray(self.X1, dtype=float))
        U0 = np.atleast_2d(np.asarray(self.U0, dtype=float))
        if X0.shape != X1.shape or U0.shape[1] != X0.shape[1]:
            raise ValueError(f"inconsistent data shapes {X0.shape}, {X1.shape}, {U0.shape}")
        D0 = np.vstack([X0, U0])
        U, S, Vt, r = _svd_split(D0)
        if r < D0.shape[0]:
            raise RankDeficientError(f"rank(D0) = {r} < {D0.shape[0]}")
        pinv = Vt[:r].T @ (U[:, :r].T / S[:r, None])
        for name, val in (("X0", X0), ("X1", X1), ("U0", U0), ("D0", D0), ("D0_pinv", pinv),
                          ("D0_kernel", Vt[r:].T.copy())):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if self.W0 is not None:
            W0 = np.asarray(self.W0, dtype=float).reshape(X0.shape)
            W0.setflags(write=False)
            object.__setattr__(self, "W0", W0)

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def T(self) -> int:
        return self.X0.shape[1]

    @classmethod
    def from_trajectory(cls, x, u, W0=None) -> "DataBatch":
        """Batch from states ``x`` (n x T+1) and inputs ``u`` (m x T)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return cls(x[:, :-1], x[:, 1:], u, W0)

    def is_shifted(self) -> bool:
        return bool(np.array_equal(self.X0[:, 1:], self.X1[:, :-1]))

    def to_csv(self, path) -> None:
        """One row per time step (x then u); the final row holds the last state only."""
        if not self.is_shifted():
            raise ValueError("only trajectory batches (X1 shifted from X0) export to CSV")
        n, m = self.n, self.m
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)])
            for t in range(self.T):
                w.writerow([repr(float(v)) for v in self.X0[:, t]] + [repr(float(v)) for v in self.U0[:, t]])
            w.writerow([repr(float(v)) for v in self.X1[:, -1]] + [""] * m)

    @classmethod
    def from_csv(cls, path) -> "DataBatch":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        n = sum(1 for h in head if h.startswith("x"))
        x = np.array([[float(v) for v in r[:n]] for r in body]).T
        u = np.array([[float(v) for v in r[n:]] for r in body[:-1]]).T
        return cls.from_trajectory(x, u)


@dataclass(frozen=True, eq=False)
class ModelSets:
    mw_T: MatrixZonotope
    mw: ConstrainedMatrixZonotope
    md: ConstrainedMatrixZonotope | None
    mdw: ConstrainedMatrixZonotope
    mol_c: ConstrainedMatrixZonotope
    nominal_A: np.ndarray
    nominal_B: np.ndarray


@dataclass(frozen=True)
class Excitation:
    """Uniform random inputs over ``fraction`` of the input box."""

    fraction: float = 0.5
    max_retries: int = 20


class PlantLike(Protocol):
    A_true: np.ndarray
    B_true: np.ndarray
    Zw_true: Zonotope
    u_lower: np.ndarray
    u_upper: np.ndarray
    state: np.ndarray


def collect_batch(plant: PlantLike, T: int, excitation: Excitation, rng) -> DataBatch:
    """Excite ``plant`` for ``T`` steps from its current state (the plant is not advanced)."""
    n, m = plant.B_true.shape
    if T < n + m + 1:
        raise ValueError(f"T = {T} must be at least n+m+1 = {n + m + 1}")
    mid = 0.5 * (plant.u_upper + plant.u_lower)
    half = 0.5 * (plant.u_upper - plant.u_lower) * excitation.fraction
    Zw = plant.Zw_true
    for _ in range(excitation.max_retries):
        u = mid[:, None] + half[:, None] * rng.uniform(-1.0, 1.0, size=(m, T))
        W = Zw.c[:, None] + Zw.G @ rng.uniform(-1.0, 1.0, size=(Zw.n_gen, T))
        x = np.empty((n, T + 1))
        x[:, 0] = plant.state
        for t in range(T):
            x[:, t + 1] = plant.A_true @ x[:, t] + plant.B_true @ u[:, t] + W[:, t]
        try:
            return DataBatch.from_trajectory(x, u, W)
        except RankDeficientError:
            continue
    raise RankDeficientError(f"no full-rank batch after {excitation.max_retries} attempts")


def open_loop_set(batch: DataBatch, mw_T: MatrixZonotope) -> MatrixZonotope:
    """All ``[A B]`` explaining the data for some disturbance in ``mw_T``."""
    P = batch.D0_pinv
    G = np.hstack([-Gi @ P for Gi in mw_T.blocks()]) if mw_T.n_gen else np.zeros((batch.n, 0))
    return MatrixZonotope((batch.X1 - mw_T.C) @ P, G)


def refine_disturbance_data(batch: DataBatch, mw_T: MatrixZonotope) -> ConstrainedMatrixZonotope:
    """Restrict ``mw_T`` to disturbances for which some linear model fits the data."""
    K = batch.D0_kernel
    if K.shape[1] == 0:
        log.warning("empty kernel (T = n+m): data-consistency constraint is vacuous")
        return ConstrainedMatrixZonotope(mw_T.C, mw_T.G)
    if mw_T.n_gen == 0:
        # a single disturbance matrix: consistent or not, nothing to constrain
        gap = np.max(np.abs((batch.X1 - mw_T.C) @ K))
        if gap > 1e-9 * (1 + np.max(np.abs(batch.X1))):
            raise EmptySetError("disturbance model too small for the observed data")
        return ConstrainedMatrixZonotope(mw_T.C, mw_T.G)
    A = np.hstack([Gi @ K for Gi in mw_T.blocks()])
    B = (batch.X1 - mw_T.C) @ K
    try:
        return ConstrainedMatrixZonotope(mw_T.C, mw_T.G, A, B)
    except EmptySetError as exc:
        raise EmptySetError("disturbance model too small for the observed data") from exc


def prior_disturbance_set(batch: DataBatch, prior: ConstrainedMatrixZonotope) -> ConstrainedMatrixZonotope:
    """Disturbance matrices ``X1 - theta D0`` for theta in the prior."""
    n, nm = prior.C.shape
    if n != batch.n or nm != batch.n + batch.m:
        raise ValueError("prior and batch dimensions differ")
    G = np.hstack([-Gi @ batch.D0 for Gi in prior.blocks()]) if prior.n_gen else np.zeros((n, 0))
    C = batch.X1 - prior.C @ batch.D0
    if isinstance(prior, ConstrainedMatrixZonotope) and prior.B.size:
        return ConstrainedMatrixZonotope(C, G, prior.A, prior.B)
    return ConstrainedMatrixZonotope(C, G)


def _pad(M, rows, cols):
    out = np.zeros((rows, cols))
    out[: M.shape[0], : M.shape[1]] = M
    return out


def intersect_disturbance(mw: ConstrainedMatrixZonotope, md: ConstrainedMatrixZonotope) -> ConstrainedMatrixZonotope:
    """Disturbances that are both data-consistent and prior-consistent.

    Coefficients are ``[beta; gamma]``; the set keeps the generators of ``mw``
    (zero blocks for ``gamma``) and stacks three block rows of equalities,
    zero-padded to a common block width.
    """
    if mw.shape != md.shape:
        raise ValueError("disturbance sets have different shapes")
    n, T = mw.shape
    sw, sd = mw.n_gen, md.n_gen
    Aw, Ad = mw.constraint_blocks(), md.constraint_blocks()
    rw, cw = (Aw.shape[1], Aw.shape[2]) if mw.B.size else (0, 0)
    rd, cd = (Ad.shape[1], Ad.shape[2]) if md.B.size else (0, 0)
    mc = max(cw, cd, T)
    nc = rw + rd + n
    blocks = np.zeros((sw + sd, nc, mc))
    for i in range(sw):
        if rw:
            blocks[i, :rw, :cw] = Aw[i]
        blocks[i, rw + rd:, :T] = mw.block(i)
    for j in range(sd):
        if rd:
            blocks[sw + j, rw:rw + rd, :cd] = Ad[j]
        blocks[sw + j, rw + rd:, :T] = -md.block(j)
    B = np.zeros((nc, mc))
    if rw:
        B[:rw, :cw] = mw.B
    if rd:
        B[rw:rw + rd, :cd] = md.B
    B[rw + rd:, :T] = md.C - mw.C
    A = blocks.transpose(1, 0, 2).reshape(nc, (sw + sd) * mc)
    G = np.hstack([mw.G, np.zeros((n, sd * T))])
    try:
        return ConstrainedMatrixZonotope(mw.C, G, A, B)
    except EmptySetError as exc:
        raise EmptySetError("prior contradicts the data-consistent disturbance set") from exc


def refined_open_loop_set(batch: DataBatch, mdw: ConstrainedMatrixZonotope):
    """Model set from a refined disturbance set, with its center as nominal model."""
    P = batch.D0_pinv
    G = np.hstack([-Gi @ P for Gi in mdw.blocks()]) if mdw.n_gen else np.zeros((batch.n, 0))
    C = (batch.X1 - mdw.C) @ P
    mol = ConstrainedMatrixZonotope(C, G, mdw.A if mdw.B.size else None, mdw.B if mdw.B.size else None,
                                    check=False)
    return mol, C[:, : batch.n].copy(), C[:, batch.n:].copy()


def closed_loop_set(batch: DataBatch, mdw: ConstrainedMatrixZonotope, V_K, tol: float = 1e-6):
    """Outer bound on ``A + B U0 V_K`` over the model set, requires ``X0 V_K = I``."""
    V_K = np.asarray(V_K, dtype=float)
    if np.max(np.abs(batch.X0 @ V_K - np.eye(batch.n))) > tol:
        raise ValueError("V_K violates X0 V_K = I")
    G = np.hstack([-Gi @ V_K for Gi in mdw.blocks()]) if mdw.n_gen else np.zeros((batch.n, 0))
    return ConstrainedMatrixZonotope((batch.X1 - mdw.C) @ V_K, G,
                                     mdw.A if mdw.B.size else None, mdw.B if mdw.B.size else None, check=False)


def build_prior_from_offline(offline: DataBatch, mwp) -> ConstrainedMatrixZonotope:
    """Model set of an offline batch under its own disturbance model.

    ``mwp`` is a disturbance zonotope (replicated over the batch) or an
    already built matrix zonotope of shape ``n x T_offline``.
    """
    if isinstance(mwp, Zonotope):
        mwp = concat_disturbance(mwp, offline.T)
    mw = mwp if isinstance(mwp, ConstrainedMatrixZonotope) else refine_disturbance_data(offline, mwp)
    return refined_open_loop_set(offline, mw)[0]


def exact_prior(A, B) -> ConstrainedMatrixZonotope:
    """Singleton prior ``{[A B]}``."""
    C = np.hstack([np.atleast_2d(A), np.atleast_2d(B)])
    return ConstrainedMatrixZonotope(C, np.zeros((C.shape[0], 0)))


def build_model_sets(batch: DataBatch, Zw: Zonotope, prior: ConstrainedMatrixZonotope | None = None) -> ModelSets:
    """All sets for one batch; ``prior=None`` gives the data-only refinement."""
    mw_T = concat_disturbance(Zw, batch.T)
    mw = refine_disturbance_data(batch, mw_T)
    md = None
    mdw = mw
    if prior is not None:
        md = prior_disturbance_set(batch, prior)
        mdw = intersect_disturbance(mw, md)
    mol_c, A, B = refined_open_loop_set(batch, mdw)
    return ModelSets(mw_T, mw, md, mdw, mol_c, A, B)

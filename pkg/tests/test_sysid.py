import numpy as np
import pytest

from zonotube import sysid
from zonotube.setops import (
    ConstrainedMatrixZonotope,
    EmptySetError,
    MatrixZonotope,
    Polytope,
    Zonotope,
    concat_disturbance,
    membership,
    sample,
)
from zonotube.simbench import Plant, rosbot
from zonotube.sysid import DataBatch, Excitation, RankDeficientError, collect_batch

A_TRUE, B_TRUE = rosbot.rosbot_model(1.0)
THETA = np.hstack([A_TRUE, B_TRUE])


def rosbot_batch(alpha, seed, T=20, start=rosbot.X0):
    pl = Plant(A_TRUE, B_TRUE, rosbot.disturbance(alpha), np.asarray(start), rosbot.input_set())
    return collect_batch(pl, T, Excitation(1.0), np.random.default_rng(seed)), rosbot.disturbance(alpha)


def offline_prior(seed):
    pl = Plant(A_TRUE, B_TRUE, rosbot.offline_disturbance(), np.zeros(3), rosbot.input_set())
    off = collect_batch(pl, rosbot.OFFLINE_T, Excitation(1.0), np.random.default_rng(seed))
    return sysid.build_prior_from_offline(off, rosbot.offline_disturbance())


# ------------------------------------------------------------------ data


def test_collect_batch_needs_nonempty_kernel():
    pl = Plant(A_TRUE, B_TRUE, rosbot.disturbance(0.5), rosbot.X0, rosbot.input_set())
    with pytest.raises(ValueError):
        collect_batch(pl, 7, Excitation(), np.random.default_rng(0))


def test_noiseless_scalar_dynamics():
    pl = Plant(np.array([[0.5]]), np.array([[1.0]]), Zonotope([0.0], np.zeros((1, 0))), np.array([1.0]),
               Polytope.box([-1.0], [1.0]))
    b = collect_batch(pl, 3, Excitation(1.0), np.random.default_rng(1))
    np.testing.assert_array_equal(b.X1, 0.5 * b.X0 + b.U0)


def test_rosbot_batch_rank():
    b, _ = rosbot_batch(0.7, 0)
    assert np.linalg.matrix_rank(b.D0) == 7
    assert b.D0_kernel.shape == (20, 13)
    np.testing.assert_allclose(b.D0 @ b.D0_pinv, np.eye(7), atol=1e-10)
    np.testing.assert_allclose(b.D0 @ b.D0_kernel, 0, atol=1e-10)


def test_rank_deficient_batch_rejected():
    with pytest.raises(RankDeficientError):
        DataBatch(np.ones((3, 10)), np.ones((3, 10)), np.zeros((4, 10)))


def test_csv_round_trip(tmp_path):
    b, _ = rosbot_batch(0.7, 3)
    b.to_csv(tmp_path / "batch.csv")
    back = DataBatch.from_csv(tmp_path / "batch.csv")
    for k in ("X0", "X1", "U0"):
        np.testing.assert_array_equal(getattr(back, k), getattr(b, k))


# ------------------------------------------------------------ model sets


def test_noiseless_open_loop_recovers_model():
    b, _ = rosbot_batch(0.0, 2)
    mol = sysid.open_loop_set(b, concat_disturbance(Zonotope(np.zeros(3), np.zeros((3, 2))), b.T))
    np.testing.assert_allclose(mol.C, THETA, atol=1e-9)
    assert np.max(np.abs(mol.G)) <= 1e-9


def test_known_disturbance_cancels():
    b, _ = rosbot_batch(0.7, 4)
    mol = sysid.open_loop_set(b, MatrixZonotope(b.W0, np.zeros((3, 0))))
    np.testing.assert_allclose(mol.C, THETA, atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_truth_in_open_loop_and_refined_sets(seed):
    b, Zw = rosbot_batch(0.7, seed)
    mw_T = concat_disturbance(Zw, b.T)
    assert membership(sysid.open_loop_set(b, mw_T), THETA)
    mw = sysid.refine_disturbance_data(b, mw_T)
    assert membership(mw, b.W0)
    sets = sysid.build_model_sets(b, Zw, offline_prior(seed))
    assert membership(sets.md, b.W0)
    assert membership(sets.mdw, b.W0)
    assert membership(sets.mol_c, THETA)


def test_empty_kernel_gives_unconstrained_set():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 8))
    U = rng.standard_normal((4, 7))
    b = DataBatch(X[:, :7], X[:, 1:], U)
    Zw = rosbot.disturbance(0.5)
    mw = sysid.refine_disturbance_data(b, concat_disturbance(Zw, 7))
    assert mw.B.size == 0


def test_noiseless_zero_disturbance_is_singleton():
    b, _ = rosbot_batch(0.0, 1)
    mw = sysid.refine_disturbance_data(b, concat_disturbance(rosbot.disturbance(0.0), b.T))
    assert np.all(mw.C == 0)
    assert np.all(mw.G == 0)


def test_disturbance_model_too_small():
    b, _ = rosbot_batch(1.0, 0)
    with pytest.raises(EmptySetError):
        sysid.refine_disturbance_data(b, concat_disturbance(rosbot.disturbance(0.01), b.T))


def test_exact_prior_disturbance_sets():
    prior = sysid.exact_prior(A_TRUE, B_TRUE)
    b0, _ = rosbot_batch(0.0, 0)
    md0 = sysid.prior_disturbance_set(b0, prior)
    assert md0.n_gen == 0
    np.testing.assert_allclose(md0.C, 0, atol=1e-12)
    b, _ = rosbot_batch(0.7, 0)
    md = sysid.prior_disturbance_set(b, prior)
    np.testing.assert_allclose(md.C, b.W0, atol=1e-12)


def _full_space_prior(n=3, nm=7, scale=1e3):
    G = np.hstack([scale * np.outer(np.eye(n)[i], np.eye(nm)[j]) for i in range(n) for j in range(nm)])
    return ConstrainedMatrixZonotope(np.zeros((n, nm)), G)


def test_intersection_with_full_space_prior():
    b, Zw = rosbot_batch(0.5, 5)
    mw = sysid.refine_disturbance_data(b, concat_disturbance(Zw, b.T))
    mdw = sysid.intersect_disturbance(mw, sysid.prior_disturbance_set(b, _full_space_prior()))
    rng = np.random.default_rng(0)
    inside = [sample(mw, rng) for _ in range(50)]
    outside = [W + rng.choice([-1, 1], W.shape) * 0.05 for W in inside]
    for W in inside + outside:
        assert membership(mw, W) == membership(mdw, W)


def test_intersection_idempotent():
    b, Zw = rosbot_batch(0.5, 6)
    mw = sysid.refine_disturbance_data(b, concat_disturbance(Zw, b.T))
    mdw = sysid.intersect_disturbance(mw, mw)
    rng = np.random.default_rng(1)
    for _ in range(30):
        W = sample(mw, rng)
        assert membership(mdw, W)
        Wo = W + 0.2 * rng.standard_normal(W.shape)
        assert membership(mdw, Wo) == membership(mw, Wo)


def test_refinement_nested_and_kernel_identity():
    b, Zw = rosbot_batch(0.7, 7)
    sets = sysid.build_model_sets(b, Zw, offline_prior(7))
    rng = np.random.default_rng(2)
    Z = sets.mdw.coeffs.sample_many(100, rng)
    for z in Z[:40]:
        W = sets.mdw.point(z)
        assert membership(sets.mw, W)
        assert membership(sets.md, W)
    for z in Z:
        W = sets.mdw.point(z)
        assert np.max(np.abs((b.X1 - W) @ b.D0_kernel)) <= 1e-6


def test_refined_set_nested_in_open_loop_set():
    b, Zw = rosbot_batch(0.7, 8)
    sets = sysid.build_model_sets(b, Zw, offline_prior(8))
    mol = sysid.open_loop_set(b, sets.mw_T)
    rng = np.random.default_rng(3)
    for z in sets.mol_c.coeffs.sample_many(100, rng):
        assert membership(mol, sets.mol_c.point(z))


def test_noiseless_exact_prior_nominal():
    b, Zw = rosbot_batch(0.0, 9)
    sets = sysid.build_model_sets(b, Zw, sysid.exact_prior(A_TRUE, B_TRUE))
    np.testing.assert_allclose(sets.nominal_A, A_TRUE, atol=1e-9)
    np.testing.assert_allclose(sets.nominal_B, B_TRUE, atol=1e-9)


def test_closed_loop_set():
    b, Zw = rosbot_batch(0.7, 10)
    sets = sysid.build_model_sets(b, Zw, offline_prior(10))
    V = b.D0_pinv[:, :3]
    np.testing.assert_allclose(b.X0 @ V, np.eye(3), atol=1e-9)
    mcl = sysid.closed_loop_set(b, sets.mdw, V)
    assert mcl.shape == (3, 3)
    assert membership(mcl, A_TRUE + B_TRUE @ b.U0 @ V)
    # another right inverse: add a kernel direction
    V2 = V + b.D0_kernel[:, :3] * 0.1
    assert membership(sysid.closed_loop_set(b, sets.mdw, V2), A_TRUE + B_TRUE @ b.U0 @ V2)
    with pytest.raises(ValueError):
        sysid.closed_loop_set(b, sets.mdw, 2 * V)


def test_noiseless_closed_loop_singleton():
    b, Zw = rosbot_batch(0.0, 11)
    sets = sysid.build_model_sets(b, Zw)
    V = b.D0_pinv[:, :3]
    mcl = sysid.closed_loop_set(b, sets.mdw, V)
    assert np.max(np.abs(mcl.G), initial=0.0) <= 1e-12
    np.testing.assert_allclose(mcl.C, A_TRUE + B_TRUE @ b.U0 @ V, atol=1e-9)


def test_offline_prior():
    pl = Plant(A_TRUE, B_TRUE, Zonotope(np.zeros(3), np.zeros((3, 0))), np.zeros(3), rosbot.input_set())
    off = collect_batch(pl, rosbot.OFFLINE_T, Excitation(1.0), np.random.default_rng(0))
    single = sysid.build_prior_from_offline(off, Zonotope(np.zeros(3), np.zeros((3, 0))))
    np.testing.assert_allclose(single.C, THETA, atol=1e-9)
    assert single.n_gen == 0
    p1, p2 = offline_prior(4), offline_prior(4)
    assert membership(p1, THETA)
    np.testing.assert_array_equal(p1.C, p2.C)
    np.testing.assert_array_equal(p1.G, p2.G)

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zonotube.setops import (
    CoeffPolytope,
    ConstrainedMatrixZonotope,
    ConstrainedZonotope,
    EmptySetError,
    IntervalBox,
    MatrixZonotope,
    Polytope,
    Zonotope,
    block_right_multiply,
    compact,
    concat_disturbance,
    from_json,
    inf_norm_bound,
    interval_enclosure,
    linear_map,
    membership,
    minkowski_sum,
    sample,
    sample_polytope,
    support,
    support_cz,
    to_json,
    vec,
    vertices,
)

seeds = st.integers(0, 2**32 - 1)


def random_zonotope(rng, n, s):
    return Zonotope(rng.standard_normal(n), rng.standard_normal((n, s)))


def random_polytope(rng, n, m):
    # random facets around the origin plus a bounding box
    A = rng.standard_normal((m, n))
    H = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([rng.uniform(0.3, 1.5, m), rng.uniform(1.0, 2.0, 2 * n)])
    return Polytope(H, h)


def random_cz(rng, n=2, s=4, rows=1):
    # equality right-hand side taken at an interior coefficient so the set is nonempty
    A = rng.standard_normal((rows, s))
    b = A @ rng.uniform(-0.5, 0.5, s)
    return ConstrainedZonotope(rng.standard_normal((n, s)), rng.standard_normal(n), A, b)


def random_cmz(rng, n=2, m=3, s=4, rows=1):
    G = rng.standard_normal((n, s * m))
    A = rng.standard_normal((rows, s * 1))
    B = (A @ rng.uniform(-0.5, 0.5, s)).reshape(rows, 1)
    return ConstrainedMatrixZonotope(rng.standard_normal((n, m)), G, A, B)


def unit_directions(k):
    t = np.linspace(0, 2 * np.pi, k, endpoint=False)
    return np.stack([np.cos(t), np.sin(t)], 1)


# ---------------------------------------------------------------- zonotopes


def test_minkowski_sum_layout():
    Z = minkowski_sum(Zonotope([0.0, 0.0], np.eye(2)), Zonotope([1.0, 0.0], [[0.5], [0.0]]))
    np.testing.assert_array_equal(Z.c, [1.0, 0.0])
    np.testing.assert_array_equal(Z.G, [[1.0, 0.0, 0.5], [0.0, 1.0, 0.0]])


def test_minkowski_sum_identity_and_mismatch(rng):
    Z = random_zonotope(rng, 3, 4)
    S = minkowski_sum(Z, Zonotope(np.zeros(3), np.zeros((3, 0))))
    np.testing.assert_array_equal(S.c, Z.c)
    np.testing.assert_array_equal(S.G, Z.G)
    with pytest.raises(ValueError):
        minkowski_sum(Z, random_zonotope(rng, 2, 1))


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_support_additivity(seed):
    rng = np.random.default_rng(seed)
    Z1, Z2 = random_zonotope(rng, 2, rng.integers(0, 5)), random_zonotope(rng, 2, rng.integers(0, 5))
    S = minkowski_sum(Z1, Z2)
    for d in unit_directions(16):
        assert S.support(d) == pytest.approx(Z1.support(d) + Z2.support(d), abs=1e-9)


def test_linear_map_identity_and_zero(rng):
    Z = random_zonotope(rng, 3, 2)
    I = linear_map(np.eye(3), Z)
    np.testing.assert_array_equal(I.G, Z.G)
    O = linear_map(np.zeros((2, 3)), Z)
    assert np.all(O.c == 0) and np.all(O.G == 0)
    with pytest.raises(ValueError):
        linear_map(np.eye(2), Z)


def test_linear_map_sampled_image(rng):
    Z = random_zonotope(rng, 3, 4)
    M = rng.standard_normal((2, 3))
    img = linear_map(M, Z)
    for _ in range(1000):
        assert membership(img, M @ sample(Z, rng))


# ------------------------------------------------------- matrix zonotopes


def test_block_right_multiply_by_hand():
    Mz = MatrixZonotope(np.zeros((2, 2)), np.hstack([np.eye(2), 2 * np.eye(2)]))
    R = block_right_multiply(Mz, [[1.0], [1.0]])
    np.testing.assert_array_equal(R.block(0), [[1.0], [1.0]])
    np.testing.assert_array_equal(R.block(1), [[2.0], [2.0]])
    same = block_right_multiply(Mz, np.eye(2))
    np.testing.assert_array_equal(same.G, Mz.G)
    with pytest.raises(ValueError):
        block_right_multiply(Mz, np.eye(3))


def test_block_right_multiply_keeps_members(rng):
    Mz = random_cmz(rng)
    Q = rng.standard_normal((3, 2))
    R = block_right_multiply(Mz, Q)
    assert isinstance(R, ConstrainedMatrixZonotope)
    for _ in range(50):
        assert membership(R, sample(Mz, rng) @ Q)


def test_concat_disturbance_layout():
    g, ch = 0.3, 0.1
    M = concat_disturbance(Zonotope([ch], [[g]]), 2)
    np.testing.assert_array_equal(M.C, [[ch, ch]])
    np.testing.assert_array_equal(M.block(0), [[g, 0.0]])
    np.testing.assert_array_equal(M.block(1), [[0.0, g]])
    Zw = Zonotope([1.0, 2.0], [[1.0, 0.5], [0.0, 2.0]])
    one = concat_disturbance(Zw, 1)
    np.testing.assert_array_equal(one.C[:, 0], Zw.c)
    for i in range(2):
        np.testing.assert_array_equal(one.block(i)[:, 0], Zw.G[:, i])
    with pytest.raises(ValueError):
        concat_disturbance(Zw, 0)


def test_concat_disturbance_column_samples(rng):
    Zw = random_zonotope(rng, 3, 2)
    M = concat_disturbance(Zw, 5)
    for _ in range(20):
        W = np.stack([sample(Zw, rng) for _ in range(5)], 1)
        assert membership(M, W)
    W[0, 0] += 10 * np.abs(Zw.G).sum()
    assert not membership(M, W)


def test_vec_is_column_major():
    np.testing.assert_array_equal(vec(np.array([[1, 2], [3, 4]])), [1, 3, 2, 4])


# ------------------------------------------------------------- polytopes


def test_support_box():
    P = Polytope.box(-np.ones(2), np.ones(2))
    assert support(P, [1.0, 0.0]) == pytest.approx(1.0)
    assert support(P, [1.0, 1.0]) == pytest.approx(2.0)


def test_support_unbounded_and_empty():
    with pytest.raises(ValueError):
        support(Polytope([[1.0, 0.0]], [1.0]), [0.0, 1.0])
    with pytest.raises(EmptySetError):
        support(Polytope([[1.0], [-1.0]], [-1.0, -1.0]), [1.0])


def _vertices_by_combinations(P):
    n = P.n
    out = []
    for rows in itertools.combinations(range(len(P.h)), n):
        M = P.H[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, P.h[list(rows)])
        if np.all(P.H @ x <= P.h + 1e-9):
            out.append(x)
    return np.array(out)


def test_support_matches_vertex_max(rng):
    P = random_polytope(rng, 3, 6)
    V = _vertices_by_combinations(P)
    for d in rng.standard_normal((20, 3)):
        assert support(P, d) == pytest.approx(np.max(V @ d), abs=1e-6)


def test_support_cz_closed_forms(rng):
    Z = random_zonotope(rng, 3, 4)
    cz = ConstrainedZonotope(Z.G, Z.c)
    d = rng.standard_normal(3)
    assert support_cz(cz, d) == pytest.approx(d @ Z.c + np.abs(Z.G.T @ d).sum())
    single = ConstrainedZonotope(np.zeros((3, 0)), Z.c)
    assert support_cz(single, d) == pytest.approx(d @ Z.c)


def test_support_cz_against_grid(rng):
    # one equality in 3 coefficients leaves a 2-D slice; a linear functional
    # peaks on its boundary, so grid the interior coarsely and the edges densely
    G = rng.standard_normal((2, 3))
    c = rng.standard_normal(2)
    a = np.array([1.0, 0.5, -0.7])
    cz = ConstrainedZonotope(G, c, a[None, :], [0.2])

    def complete(z1, z2):
        return np.stack([z1, z2, (0.2 - z1 - 0.5 * z2) / -0.7], 1)

    t = np.linspace(-1, 1, 401)
    z1, z2 = np.meshgrid(t, t)
    pts = [complete(z1.ravel(), z2.ravel())]
    s = np.linspace(-1, 1, 20001)
    for v in (-1.0, 1.0):
        pts.append(complete(np.full_like(s, v), s))
        pts.append(complete(s, np.full_like(s, v)))
        pts.append(complete(s, (0.2 - s + 0.7 * v) / 0.5))  # z3 = v
    Zs = np.vstack(pts)
    Zs = Zs[np.all(np.abs(Zs) <= 1 + 1e-12, axis=1)]
    for d in unit_directions(8):
        grid = np.max(Zs @ (G.T @ d)) + d @ c
        lp = support_cz(cz, d)
        assert grid <= lp + 1e-9
        assert lp - grid <= 1e-3


def test_interval_enclosure_examples():
    box = interval_enclosure(Polytope.box(-np.ones(3), np.ones(3)))
    np.testing.assert_allclose(box.lower, -1)
    np.testing.assert_allclose(box.upper, 1)
    simplex = Polytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
    b = interval_enclosure(simplex)
    np.testing.assert_allclose(b.lower, [0, 0], atol=1e-9)
    np.testing.assert_allclose(b.upper, [1, 1], atol=1e-9)


def test_inf_norm_bound_examples():
    assert inf_norm_bound(Polytope.box(-np.ones(2), np.ones(2))) == pytest.approx(1.0)
    assert inf_norm_bound(Polytope.box([-2.0, 0.0], [1.0, 3.0])) == pytest.approx(3.0)


def test_vertices_examples():
    V = vertices(Polytope.box(-np.ones(2), np.ones(2)))
    assert sorted(map(tuple, np.round(V, 9))) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    cp = CoeffPolytope(np.array([[1.0, 1.0]]), np.array([0.0]), 2)
    assert sorted(map(tuple, np.round(cp.vertices(), 9))) == [(-1, 1), (1, -1)]


def test_vertices_rank_condition(rng):
    P = random_polytope(rng, 3, 5)
    V = vertices(P)
    assert V is not None and len(V)
    for v in V:
        active = np.abs(P.H @ v - P.h) <= 1e-7
        assert np.all(P.H @ v <= P.h + 1e-9)
        assert np.linalg.matrix_rank(P.H[active]) >= 3


def test_polytope_scaling_is_linear(rng):
    P = random_polytope(rng, 2, 4)
    for a in (0.25, 0.5, 1.0):
        for d in unit_directions(6):
            assert support(P.scaled(a), d) == pytest.approx(a * support(P, d), abs=1e-9)


def test_sample_polytope_members(rng):
    P = random_polytope(rng, 3, 6)
    X = sample_polytope(P, rng, 300)
    assert X.shape == (300, 3)
    assert np.all(X @ P.H.T <= P.h + 1e-9)
    bound = inf_norm_bound(P)
    assert np.all(np.abs(X) <= bound + 1e-9)


# ------------------------------------------------------------ membership


def test_membership_center_and_outside(rng):
    Z = random_zonotope(rng, 3, 3)
    assert membership(Z, Z.c)
    assert not membership(Z, Z.c + 2 * Z.G.sum(axis=1))
    cz = random_cz(rng)
    assert membership(cz, cz.c + cz.G @ cz.coeffs.project(np.zeros(cz.n_gen)))


def test_membership_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        membership(random_zonotope(rng, 3, 2), np.zeros(2))


def test_constrained_zonotope_samples(rng):
    cz = random_cz(rng, n=3, s=5, rows=2)
    for _ in range(50):
        z = cz.coeffs.sample(rng)
        assert cz.coeffs.contains(z)
        assert membership(cz, cz.c + cz.G @ z)


def test_sample_degenerate_cases(rng):
    Z = Zonotope([1.0, 2.0], np.zeros((2, 0)))
    np.testing.assert_array_equal(sample(Z, rng), [1.0, 2.0])
    # z1 = z2 = 0 forced by z1 + z2 = 0 and z1 - z2 = 0
    cz = ConstrainedZonotope(np.eye(2), [3.0, 4.0], [[1.0, 1.0], [1.0, -1.0]], [0.0, 0.0])
    np.testing.assert_allclose(sample(cz, rng), [3.0, 4.0], atol=1e-9)


def test_cmz_samples_are_members(rng):
    M = random_cmz(rng)
    for _ in range(200):
        assert membership(M, sample(M, rng))


def test_empty_constrained_set_rejected():
    with pytest.raises(EmptySetError):
        ConstrainedZonotope(np.eye(2), [0.0, 0.0], [[1.0, 0.0]], [2.0])


def test_coeff_sample_many_feasible(rng):
    A = rng.standard_normal((2, 6))
    b = A @ rng.uniform(-0.3, 0.3, 6)
    Z = CoeffPolytope(A, b, 6).sample_many(500, rng)
    assert Z.shape == (500, 6)
    assert np.max(np.abs(Z)) <= 1 + 1e-9
    np.testing.assert_allclose(Z @ A.T - b, 0.0, atol=1e-7)


def test_compact_drops_zero_columns():
    Z = compact(Zonotope([0.0, 0.0], [[1.0, 0.0, 2.0], [0.0, 0.0, 1.0]]))
    assert Z.n_gen == 2


# ------------------------------------------------------------------ json


def test_json_round_trip(rng):
    sets = [random_zonotope(rng, 2, 3), random_cz(rng), MatrixZonotope(np.ones((2, 3)), np.ones((2, 6))),
            random_cmz(rng), Polytope.box(-np.ones(2), np.ones(2)), IntervalBox([0.0, -1.0], [1.0, 2.0])]
    for S in sets:
        back = from_json(to_json(S))
        assert type(back) is type(S)
        assert to_json(back) == to_json(S)

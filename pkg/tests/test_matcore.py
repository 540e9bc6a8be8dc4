import numpy as np
import pytest

from safeguard import matcore
from safeguard.matcore import (DimensionError, Ellipsoid, as_symmetric, block,
                               block_sym, ellipsoid_contains, he, is_pd,
                               is_psd, max_eig, min_eig, null_space_basis)

from conftest import random_spd, random_symmetric


def charpoly_min_eig_bisection(M, tol=1e-12):
    """Independent oracle: bisection on det(M - lam I) sign changes, scanning
    down from below the Gershgorin lower bound."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    lo = float(np.min(np.diag(M) - np.sum(np.abs(M), axis=1) + np.abs(np.diag(M)))) - 1.0
    hi = float(np.max(np.diag(M) + np.sum(np.abs(M), axis=1))) + 1.0

    def count_below(lam):
        # eigenvalue count below lam via LDL-ish: number of negative pivots
        A = M - lam * np.eye(n)
        count = 0
        A = A.copy()
        for k in range(n):
            piv = A[k, k]
            if piv == 0.0:
                piv = 1e-300
            if piv < 0:
                count += 1
            A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:]) / piv
        return count

    # smallest eigenvalue: bisect for the first lam with count_below(lam) >= 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if count_below(mid) >= 1:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def test_he_identity():
    assert np.array_equal(he(np.eye(2)), 2.0 * np.eye(2))


def test_he_forced_by_definition():
    assert np.array_equal(he([[0.0, 1.0], [0.0, 0.0]]),
                          [[0.0, 1.0], [1.0, 0.0]])


def test_he_matches_transpose_add_oracle():
    rng = np.random.default_rng(42)
    M = rng.normal(size=(5, 5))
    expected = np.array([[M[i, j] + M[j, i] for j in range(5)]
                         for i in range(5)])
    assert np.array_equal(he(M), expected)


def test_he_rejects_nonsquare():
    with pytest.raises(DimensionError):
        he(np.zeros((2, 3)))


def test_min_eig_trivial():
    assert min_eig(np.eye(3)) == pytest.approx(1.0)
    assert min_eig(np.diag([2.0, -3.0])) == pytest.approx(-3.0)


def test_min_eig_matches_bisection_oracle():
    rng = np.random.default_rng(7)
    M = random_symmetric(rng, 8)
    oracle = charpoly_min_eig_bisection(M)
    assert min_eig(M) == pytest.approx(oracle, abs=1e-8)


def test_is_psd_is_pd():
    assert is_psd(np.eye(2), 1e-9) and is_pd(np.eye(2), 1e-9)
    assert is_psd(np.diag([1.0, 0.0]), 1e-9)
    assert not is_pd(np.diag([1.0, 0.0]), 1e-9)


def test_displayed_case_study_Y_is_pd():
    Y = [[573.0413, 173.3292, -61.6569],
         [173.3292, 173.3396, -0.5772],
         [-61.6569, -0.5772, 509.5987]]
    assert is_pd(Y, 1e-9)


def test_null_space_of_row_vector():
    W = null_space_basis([[0.0, 1.0, 0.0]])
    assert W.shape == (3, 2)
    # spans {e1, e3}
    assert np.allclose(W[1, :], 0.0, atol=1e-12)
    assert np.allclose(W.T @ W, np.eye(2), atol=1e-12)


def test_null_space_full_rank_is_empty():
    assert null_space_basis(np.eye(3)).shape == (3, 0)


def test_null_space_rank2_wide():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(2, 5))
    W = null_space_basis(M)
    assert W.shape == (5, 3)
    assert np.max(np.abs(M @ W)) <= 1e-12 * np.linalg.norm(M, 2)
    assert np.allclose(W.T @ W, np.eye(3), atol=1e-12)
    # Gram-Schmidt oracle on the exact kernel: same subspace
    _, _, vt = np.linalg.svd(M)
    kernel = vt[2:].T
    proj = kernel @ kernel.T
    assert np.allclose(proj @ W, W, atol=1e-10)


def test_null_space_property_sweep():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        r = int(rng.integers(1, 13))
        c = int(rng.integers(1, 13))
        rank_cap = int(rng.integers(0, min(r, c) + 1))
        M = (rng.normal(size=(r, rank_cap)) @ rng.normal(size=(rank_cap, c))
             if rank_cap else np.zeros((r, c)))
        W = null_space_basis(M)
        if W.shape[1]:
            assert np.max(np.abs(M @ W)) <= 1e-9 * max(
                1e-300, np.linalg.norm(M, 2))
            assert np.allclose(W.T @ W, np.eye(W.shape[1]), atol=1e-10)


def test_block_identity_assembly():
    I1 = np.eye(1)
    z = np.zeros((1, 1))
    assert np.array_equal(block([[I1, z], [z, I1]]), np.eye(2))


def test_block_readback_random():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(2, 3))
    B = rng.normal(size=(2, 2))
    C = rng.normal(size=(4, 3))
    D = rng.normal(size=(4, 2))
    M = block([[A, B], [C, D]])
    # index-arithmetic oracle
    for i in range(6):
        for j in range(5):
            src = (A if i < 2 and j < 3 else B if i < 2 else
                   C if j < 3 else D)
            si, sj = i % 2 if i < 2 else i - 2, j % 3 if j < 3 else j - 3
            assert M[i, j] == src[si, sj]


def test_block_dimension_mismatch_named():
    with pytest.raises(DimensionError, match=r"\(1,1\)"):
        block([[np.eye(2), np.zeros((2, 2))],
               [np.zeros((3, 2)), np.zeros((2, 2))]])


def test_block_sym_mirrors_transposes():
    rng = np.random.default_rng(9)
    A = random_symmetric(rng, 2)
    B = rng.normal(size=(2, 3))
    C = random_symmetric(rng, 3)
    M = block_sym([[A, B], [C]])
    assert np.array_equal(M, M.T)
    assert np.array_equal(M[:2, 2:], B)
    assert np.array_equal(M[2:, :2], B.T)


def test_as_symmetric_rejects_gross_asymmetry():
    with pytest.raises(ValueError, match="not symmetric"):
        as_symmetric([[0.0, 1.0], [0.0, 0.0]])


def test_as_symmetric_absorbs_roundoff():
    M = np.array([[1.0, 2.0], [2.0 + 1e-12, 3.0]])
    S = as_symmetric(M)
    assert np.array_equal(S, S.T)


def test_rayleigh_bounds_property():
    rng = np.random.default_rng(21)
    for _ in range(200):
        n = int(rng.integers(1, 11))
        M = random_symmetric(rng, n, scale=rng.random() * 5 + 0.1)
        lo, hi = min_eig(M), max_eig(M)
        mean = np.trace(M) / n
        assert lo <= mean + 1e-10
        assert mean <= hi + 1e-10


def test_ellipsoid_contains_trivial():
    assert ellipsoid_contains(2.0 * np.eye(2), np.eye(2))
    assert not ellipsoid_contains(np.eye(2), 2.0 * np.eye(2))


def test_ellipsoid_contains_agrees_with_boundary_oracle():
    # Oracle: the exact worst boundary point of E(inner) evaluated in
    # E(outer) is the top eigenvalue of inner^{-1/2} outer inner^{-1/2}
    # (a generalized-eigenvalue route, independent of the PSD-difference
    # implementation); sampled boundary points must never exceed it.
    rng = np.random.default_rng(17)
    for k in range(500):
        n = int(rng.integers(1, 7))
        inner = random_spd(rng, n, scale=1.0 + rng.random())
        outer = random_spd(rng, n, scale=1.0 + rng.random())
        exact = ellipsoid_contains(inner, outer, tol=0.0)
        half = matcore.inv_sqrtm_psd(inner)
        worst = max_eig(half @ outer @ half)
        assert exact == (worst <= 1.0 + 1e-12)
        if k % 10 == 0:
            d = rng.normal(size=(200, n))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            pts = d @ half.T
            vals = np.einsum("ti,ij,tj->t", pts, outer, pts)
            assert np.max(vals) <= worst + 1e-9


def test_ellipsoid_type_validation():
    e = Ellipsoid(np.eye(2))
    assert e.dim == 2
    assert e.quadratic([1.0, 0.0]) == pytest.approx(1.0)
    assert e.contains_point([0.5, 0.5])
    with pytest.raises(DimensionError):
        Ellipsoid(np.eye(2), center=[0.0, 0.0, 0.0])

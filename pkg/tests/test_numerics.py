import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cofactor_inverse, random_hpd
from mapdoa.errors import NotPositiveDefinite, NotPSD
from mapdoa.numerics import cholesky, hermitian_eig, hermitian_solve, hermitize, psd_sqrt, rank_one_update


def test_solve_identity():
    C = np.arange(6).reshape(3, 2) + 1j
    npt.assert_array_equal(hermitian_solve(np.eye(3), C), C)


def test_solve_scaled_identity():
    npt.assert_allclose(hermitian_solve(2 * np.eye(2), np.eye(2)), 0.5 * np.eye(2))


def test_solve_matches_cofactor_inverse(rng):
    B = random_hpd(rng, 4)
    C = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    Z = hermitian_solve(B, C)
    npt.assert_allclose(Z, cofactor_inverse(B) @ C, rtol=1e-10, atol=1e-12)


def test_solve_vector_rhs(rng):
    B = random_hpd(rng, 5)
    c = rng.standard_normal(5) + 0j
    npt.assert_allclose(B @ hermitian_solve(B, c), c, atol=1e-12)


def test_solve_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        hermitian_solve(np.diag([1.0, -1.0]), np.eye(2))


def test_solve_rejects_tiny_pivot():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.diag([1.0, 1e-30]))


def test_solve_shape_check():
    with pytest.raises(ValueError):
        hermitian_solve(np.eye(3), np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_solve_residual(n, seed):
    r = np.random.default_rng(seed)
    B = random_hpd(r, n, shift=0.5)
    C = r.standard_normal((n, 2)) + 1j * r.standard_normal((n, 2))
    Z = hermitian_solve(B, C)
    assert np.linalg.norm(B @ Z - C) <= 1e-10 * np.linalg.norm(C)


def test_eig_diagonal():
    w, V = hermitian_eig(np.diag([1.0, 2.0]))
    npt.assert_allclose(w, [1.0, 2.0])
    npt.assert_allclose(np.abs(V), np.eye(2))


def test_eig_swap():
    w, _ = hermitian_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
    npt.assert_allclose(w, [-1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_eig_reconstruction(n, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, n)) + 1j * r.standard_normal((n, n))
    B = hermitize(X)
    w, V = hermitian_eig(B)
    assert np.all(np.diff(w) >= 0)
    assert np.linalg.norm(V @ np.diag(w) @ V.conj().T - B) <= 1e-9 * np.linalg.norm(B)
    npt.assert_allclose(V.conj().T @ V, np.eye(n), atol=1e-10)
    assert abs(w.sum() - np.trace(B).real) <= 1e-10 * max(1.0, np.abs(w).sum())


def test_psd_sqrt_examples():
    npt.assert_allclose(psd_sqrt(4 * np.eye(2)), 2 * np.eye(2))
    npt.assert_array_equal(psd_sqrt(np.zeros((3, 3))), np.zeros((3, 3)))
    R = 0.5 * np.eye(2)
    npt.assert_allclose(np.sqrt(2) * psd_sqrt(R), np.eye(2), atol=1e-15)


def test_psd_sqrt_rejects_negative():
    with pytest.raises(NotPSD):
        psd_sqrt(np.diag([1.0, -0.1]))


def test_psd_sqrt_clamps_roundoff():
    S = psd_sqrt(np.diag([1.0, -1e-13]))
    npt.assert_allclose(S, np.diag([1.0, 0.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_psd_sqrt_round_trip(n, rank, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, min(rank, n))) + 1j * r.standard_normal((n, min(rank, n)))
    B = X @ X.conj().T
    S = psd_sqrt(B)
    npt.assert_allclose(S, S.conj().T, atol=1e-14)
    assert np.linalg.norm(S @ S - B) <= 1e-9 * np.linalg.norm(B)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_psd_sqrt_of_square(n, seed):
    r = np.random.default_rng(seed)
    w = r.uniform(0.01, 3.0, n)
    Q, _ = np.linalg.qr(r.standard_normal((n, n)) + 1j * r.standard_normal((n, n)))
    S = hermitize((Q * w) @ Q.conj().T)
    assert np.linalg.norm(psd_sqrt(S @ S) - S) <= 1e-8 * np.linalg.norm(S)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.floats(-0.3, 5.0), st.integers(0, 2**32 - 1))
def test_rank_one_update_matches_inverse(n, d, seed):
    r = np.random.default_rng(seed)
    B = random_hpd(r, n, shift=1.0)
    x = r.standard_normal(n) + 1j * r.standard_normal(n)
    x /= np.linalg.norm(x)
    U = rank_one_update(np.linalg.inv(B), x, d)
    ref = np.linalg.inv(B + d * np.outer(x, x.conj()))
    assert np.linalg.norm(U - ref) <= 1e-9 * np.linalg.norm(ref)


def test_rank_one_update_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        rank_one_update(np.eye(2), np.array([1.0, 0.0]), -1.0)

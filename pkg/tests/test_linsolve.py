import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from hystfem.linsolve import (
    Factorization,
    NotSPDError,
    StaleFactorizationError,
    fingerprint,
    solve_spd,
)


def laplacian(n):
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


@settings(max_examples=30)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_solve_residual_bound(n, seed):
    rng = np.random.default_rng(seed)
    G = sp.random(n, n, density=0.2, random_state=rng)
    A = laplacian(n) + G @ G.T
    b = rng.normal(size=n)
    x = solve_spd(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_reuse_for_many_rhs():
    A = laplacian(40)
    fac = Factorization(A)
    B = np.random.default_rng(0).normal(size=(40, 5))
    for j in range(5):
        np.testing.assert_allclose(A @ fac.solve(B[:, j], A), B[:, j], atol=1e-12)


def test_indefinite_rejected():
    A = laplacian(5).tolil()
    A[2, 2] = -3.0
    with pytest.raises(NotSPDError):
        Factorization(A.tocsr())


def test_singular_rejected():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(NotSPDError):
        Factorization(A)


def test_stale_factorization_detected():
    A = laplacian(6)
    fac = Factorization(A)
    with pytest.raises(StaleFactorizationError):
        fac.solve(np.ones(6), A * 2.0)


def test_fingerprint_tracks_values_and_pattern():
    A = laplacian(6)
    assert fingerprint(A) == fingerprint(A.copy())
    assert fingerprint(A) != fingerprint(A * (1 + 1e-15))
    assert fingerprint(A) == fingerprint(A.tocsc())


def test_shape_errors_and_empty():
    with pytest.raises(ValueError, match="square"):
        Factorization(sp.csr_matrix(np.ones((2, 3))))
    with pytest.raises(ValueError, match="rhs"):
        Factorization(laplacian(3)).solve(np.ones(4))
    assert Factorization(sp.csr_matrix((0, 0))).solve(np.zeros(0)).shape == (0,)

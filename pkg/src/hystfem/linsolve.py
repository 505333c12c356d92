"""Sparse SPD solves with a reusable factorization.

SuperLU runs in symmetric mode (no row pivoting, symmetric fill-reducing
ordering). For an SPD matrix the pivots are then the Cholesky pivots squared,
so a non-positive pivot flags a matrix that is not positive definite.
"""

from __future__ import annotations

import hashlib

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRECT_TOL = 1e-12


class NotSPDError(ValueError):
    """The matrix failed the positive-definiteness check during factorization."""


class StaleFactorizationError(RuntimeError):
    """A factorization was applied to a matrix other than the one it came from."""


class SolveAccuracyError(RuntimeError):
    """A solve missed the requested relative residual."""


def fingerprint(A: sp.spmatrix) -> str:
    A = sp.csr_matrix(A)
    h = hashlib.sha1()
    for arr in (np.asarray(A.shape), A.indptr, A.indices, A.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


class Factorization:
    """LU factors of one SPD matrix, reusable for any number of right-hand sides."""

    def __init__(self, A: sp.spmatrix, tol: float = DIRECT_TOL) -> None:
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        self.tol = tol
        self._A = A
        self._fp = fingerprint(A)
        if A.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:  # exactly singular
            raise NotSPDError(f"factorization failed: {exc}") from exc
        pivots = self._lu.U.diagonal()
        if not np.all(pivots > 0):
            i = int(np.flatnonzero(~(pivots > 0))[0])
            raise NotSPDError(f"non-positive pivot {pivots[i]:.3e} at position {i}")

    def matches(self, A: sp.spmatrix) -> bool:
        return fingerprint(A) == self._fp

    def solve(self, rhs: npt.ArrayLike, A: sp.spmatrix | None = None) -> np.ndarray:
        """Solve and verify the relative residual. Passing ``A`` also checks it is the factored matrix."""
        if A is not None and not self.matches(A):
            raise StaleFactorizationError("factorization does not belong to this matrix")
        b = np.asarray(rhs, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"rhs has length {b.shape[0]}, matrix has {self.shape[0]} rows")
        if self._lu is None:
            return np.zeros_like(b)
        x = self._lu.solve(b)
        nb = np.linalg.norm(b)
        for _ in range(3):
            res = b - self._A @ x
            r = np.linalg.norm(res)
            if r <= self.tol * nb:
                return x
            x = x + self._lu.solve(res)  # iterative refinement
        raise SolveAccuracyError(f"relative residual {r / nb:.3e} exceeds {self.tol:.1e}")


def solve_spd(A: sp.spmatrix, rhs: npt.ArrayLike, tol: float = DIRECT_TOL) -> np.ndarray:
    """One-shot SPD solve with the residual bound ||A x - b|| <= tol ||b||."""
    return Factorization(A, tol).solve(rhs)

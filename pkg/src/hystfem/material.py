"""Energy-based vector hysteresis cells.

Each cell carries the internal energy

    U(J) = -(c A_s J_s / pi) log cos(pi |J| / (2 J_s)),    c in {1, 2},

and a pinning strength chi. A polarization update minimizes
U(J) - <H, J> + chi |J - J_p|_eps.
"""

from __future__ import annotations

import dataclasses
import math

from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from . import _kernels

MU0 = 4e-7 * math.pi
NU0 = 1.0 / MU0

FIVE_CELL_JS = (0.11, 0.3, 0.44, 0.33, 0.04)
FIVE_CELL_CHI = (0.0, 10.0, 20.0, 40.0, 60.0)
FIVE_CELL_AS = 65.0
DEFAULT_EPS = 1e-10


class DomainError(ValueError):
    """A polarization left the open disk |J| < J_s."""


class LocalSolveError(RuntimeError):
    """An element-local minimization did not converge."""


@dataclasses.dataclass(frozen=True)
class CellParams:
    A_s: float
    J_s: float
    chi: float
    eps: float = DEFAULT_EPS
    form_coeff: int = 2

    def __post_init__(self) -> None:
        if not self.A_s > 0:
            raise ValueError(f"A_s must be positive, got {self.A_s}")
        if not self.J_s > 0:
            raise ValueError(f"J_s must be positive, got {self.J_s}")
        if not self.chi >= 0:
            raise ValueError(f"chi must be non-negative, got {self.chi}")
        if not self.eps >= 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if self.form_coeff not in (1, 2):
            raise ValueError(f"form_coeff must be 1 or 2, got {self.form_coeff}")

    def with_(self, **kw) -> "CellParams":
        return dataclasses.replace(self, **kw)


@dataclasses.dataclass(frozen=True)
class MaterialModel:
    cells: tuple[CellParams, ...]
    nu0: float = NU0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.cells:
            raise ValueError("a material needs at least one cell")
        if not self.nu0 > 0:
            raise ValueError("nu0 must be positive")
        cols = []
        for f in ("A_s", "J_s", "form_coeff", "chi", "eps"):
            a = np.array([getattr(p, f) for p in self.cells], dtype=float)
            a.setflags(write=False)
            cols.append(a)
        object.__setattr__(self, "_arrays", tuple(cols))

    @classmethod
    def five_cell(cls, eps: float = DEFAULT_EPS, form_coeff: int = 2) -> "MaterialModel":
        return cls(tuple(CellParams(FIVE_CELL_AS, js, chi, eps, form_coeff) for js, chi in zip(FIVE_CELL_JS, FIVE_CELL_CHI)))

    @property
    def K(self) -> int:
        return len(self.cells)

    def arrays(self) -> tuple[np.ndarray, ...]:
        """(A_s, J_s, form_coeff, chi, eps) as read-only float arrays of length K."""
        return self._arrays

    @property
    def J_s(self) -> np.ndarray:
        return self._arrays[1]

    @property
    def chi(self) -> np.ndarray:
        return self._arrays[3]

    @property
    def eps(self) -> np.ndarray:
        return self._arrays[4]


@dataclasses.dataclass
class PolarizationState:
    """Per-element, per-cell polarizations, arrays of shape (T, K, 2) in tesla."""

    J: npt.NDArray[np.float64]
    J_prev: npt.NDArray[np.float64]

    @classmethod
    def demagnetized(cls, n_elements: int, K: int) -> "PolarizationState":
        return cls(np.zeros((n_elements, K, 2)), np.zeros((n_elements, K, 2)))

    def copy(self) -> "PolarizationState":
        return PolarizationState(self.J.copy(), self.J_prev.copy())

    def advanced(self) -> "PolarizationState":
        """State for the next load step: J_prev <- J."""
        return PolarizationState(self.J.copy(), self.J.copy())

    def check_domain(self, m: MaterialModel) -> None:
        for name, arr in (("J", self.J), ("J_prev", self.J_prev)):
            r = np.linalg.norm(arr, axis=-1)
            bad = np.argwhere(r >= m.J_s)
            if bad.size:
                e, k = bad[0]
                raise DomainError(f"{name} of element {e}, cell {k}: |J|={r[e, k]:.6g} >= J_s={m.J_s[k]}")


# ---------------------------------------------------------------- point functions


def reg_norm(x: npt.ArrayLike, eps: float) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.sum(x * x, axis=-1) + eps)


def _radius(J: npt.ArrayLike, p: CellParams) -> tuple[np.ndarray, np.ndarray]:
    J = np.asarray(J, dtype=float)
    r = np.sqrt(np.sum(J * J, axis=-1))
    if np.any(r >= p.J_s):
        raise DomainError(f"|J| = {np.max(r):.6g} outside the domain |J| < J_s = {p.J_s}")
    return J, r


def radial_derivative(r: npt.ArrayLike, p: CellParams) -> np.ndarray:
    """u'(r) of the radial energy profile (an anhysteretic field in A/m)."""
    r = np.asarray(r, dtype=float)
    return 0.5 * p.form_coeff * p.A_s * np.tan(0.5 * math.pi * r / p.J_s)


def anhysteretic(h: npt.ArrayLike, p: CellParams) -> np.ndarray:
    """Inverse of the radial derivative: r with u'(r) = h (odd extension)."""
    h = np.asarray(h, dtype=float)
    return (2.0 * p.J_s / math.pi) * np.arctan(2.0 * h / (p.form_coeff * p.A_s))


def _profile(r: np.ndarray, p: CellParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    flat = np.atleast_1d(r).ravel()
    out = np.array([_kernels.radial(float(x), p.A_s, p.J_s, float(p.form_coeff)) for x in flat])
    shape = np.shape(r)
    return out[:, 0].reshape(shape), out[:, 1].reshape(shape), out[:, 2].reshape(shape)


def energy_density(J: npt.ArrayLike, p: CellParams) -> np.ndarray | float:
    _, r = _radius(J, p)
    th = 0.5 * math.pi * r / p.J_s
    return -(p.form_coeff * p.A_s * p.J_s / math.pi) * 0.5 * np.log1p(-np.sin(th) ** 2)


def energy_gradient(J: npt.ArrayLike, p: CellParams) -> np.ndarray:
    J, r = _radius(J, p)
    _, du_r, _ = _profile(r, p)
    return du_r[..., None] * J


def energy_hessian(J: npt.ArrayLike, p: CellParams) -> np.ndarray:
    J, r = _radius(J, p)
    _, du_r, w = _profile(r, p)
    eye = np.eye(2)
    return du_r[..., None, None] * eye + w[..., None, None] * J[..., :, None] * J[..., None, :]


# ---------------------------------------------------------------- single-cell update


def cell_objective(J: npt.ArrayLike, H: npt.ArrayLike, J_p: npt.ArrayLike, p: CellParams) -> float:
    J = np.asarray(J, dtype=float)
    return float(energy_density(J, p) - np.dot(H, J) + p.chi * reg_norm(J - np.asarray(J_p), p.eps))


def _cell_grad_hess(J: np.ndarray, H: np.ndarray, J_p: np.ndarray, p: CellParams) -> tuple[np.ndarray, np.ndarray]:
    g = energy_gradient(J, p) - H
    Hs = energy_hessian(J, p)
    d = J - J_p
    n = float(np.sqrt(d @ d + p.eps))
    if p.chi > 0 and n > 0:
        v = d / n
        g = g + p.chi * v
        Hs = Hs + (p.chi / n) * (np.eye(2) - np.outer(v, v))
    return g, Hs


def cell_update_H(
    H: npt.ArrayLike,
    J_p: npt.ArrayLike,
    p: CellParams,
    tol: float | None = None,
    max_iter: int = 200,
) -> np.ndarray:
    """Minimizer of U(J) - <H, J> + chi |J - J_p|_eps for one cell.

    For eps = 0 the pinned case |H - grad U(J_p)| <= chi is decided exactly and
    returns J_p; otherwise the minimizer differs from J_p and is found by damped
    Newton on the (locally smooth) objective.
    """
    H = np.asarray(H, dtype=float)
    J_p = np.asarray(J_p, dtype=float)
    _radius(J_p, p)
    scale = float(np.linalg.norm(H)) + p.A_s + p.chi
    if tol is None:
        tol = 1e-12 * scale
    drive = H - energy_gradient(J_p, p)
    dn = float(np.linalg.norm(drive))
    if dn <= p.chi and (p.eps == 0 or p.chi == 0 and dn == 0):
        return J_p.copy()

    def f(J: np.ndarray) -> float:
        if np.linalg.norm(J) >= p.J_s:
            return math.inf
        return cell_objective(J, H, J_p, p)

    J = J_p.copy()
    if dn > p.chi:
        e = drive / dn
        h_eff = H - p.chi * e
        hn = float(np.linalg.norm(h_eff))
        guess = anhysteretic(hn, p) * h_eff / hn if hn > 0 else np.zeros(2)
        if np.array_equal(guess, J_p) or f(guess) > f(J_p):
            guess = J_p + 1e-6 * p.J_s * e
        J = guess
    fJ = f(J)
    g, Hs = _cell_grad_hess(J, H, J_p, p)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol:
            break
        step = -np.linalg.solve(Hs, g)
        slope = float(g @ step)
        t = _kernels._max_step(J[None, :], step[None, :], np.array([p.J_s]))
        accepted = False
        first = True
        while t > 1e-20:
            Jt = J + t * step
            ft = f(Jt)
            if ft <= fJ + 1e-4 * t * slope:
                accepted = True
            elif first and ft <= fJ + 1e-12 * abs(fJ):
                gt, _ = _cell_grad_hess(Jt, H, J_p, p)
                accepted = np.linalg.norm(gt) < np.linalg.norm(g)
            if accepted:
                break
            first = False
            t *= 0.5
        if not accepted:
            break
        J, fJ = Jt, ft
        g, Hs = _cell_grad_hess(J, H, J_p, p)
        if t * np.max(np.abs(step)) <= 1e-15 * p.J_s:
            break
    res = float(np.linalg.norm(g))
    if res > max(1e3 * tol, 1e-9 * scale):
        raise LocalSolveError(f"cell update did not converge: residual {res:.3e} A/m")
    return J


def dissipation_residual(H: npt.ArrayLike, J: npt.ArrayLike, p: CellParams) -> float:
    """|H - grad U(J)| - chi; non-positive at a minimizer of the cell update."""
    return float(np.linalg.norm(np.asarray(H, dtype=float) - energy_gradient(J, p)) - p.chi)


# ---------------------------------------------------------------- multi-cell update


LOCAL_TOL_T = 1e-13  # residual tolerance in tesla (A/m divided by nu0)
LOCAL_FAIL_T = 1e-9


class LocalSolveInfo(NamedTuple):
    H: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray


def local_polarization_update(
    B: npt.ArrayLike,
    J_p: npt.ArrayLike,
    m: MaterialModel,
    J0: npt.ArrayLike | None = None,
    H0: npt.ArrayLike | None = None,
    max_iter: int = 100,
    return_info: bool = False,
):
    """Joint minimizer over (J_1..J_K) of

        sum_k U_k(J_k) + nu0/2 |B - sum_k J_k|^2 + sum_k chi_k |J_k - J_p,k|_eps.

    ``B`` is (2,) or (T, 2); ``J_p`` is (K, 2) or (T, K, 2). ``J0`` is the
    starting point (defaults to ``J_p``). ``H0`` is an optional starting field,
    typically the H returned by the previous call with a nearby B.
    """
    B = np.asarray(B, dtype=float)
    J_p = np.asarray(J_p, dtype=float)
    single = B.ndim == 1
    Bv = np.ascontiguousarray(B.reshape(-1, 2))
    Jpv = np.ascontiguousarray(J_p.reshape(len(Bv), m.K, 2))
    J0v = Jpv if J0 is None else np.ascontiguousarray(np.asarray(J0, dtype=float).reshape(Jpv.shape))
    if np.any(np.einsum("tkd,tkd->tk", J0v, J0v) >= m.J_s**2):
        raise DomainError("starting polarization outside the domain")
    use_H0 = H0 is not None
    H0v = np.ascontiguousarray(np.asarray(H0, dtype=float).reshape(-1, 2)) if use_H0 else np.zeros((1, 2))
    As, Js, c, chi, eps = m.arrays()
    J = np.empty_like(Jpv)
    H = np.empty_like(Bv)
    iters = np.empty(len(Bv), dtype=np.int64)
    res = np.empty(len(Bv))
    _kernels.local_minimize(Bv, Jpv, J0v, H0v, use_H0, As, Js, c, chi, eps, m.nu0,
                            LOCAL_TOL_T * m.nu0, max_iter, J, H, iters, res)
    limit = LOCAL_FAIL_T * m.nu0 + 1e-9 * np.sqrt(np.einsum("td,td->t", H, H))
    bad = np.flatnonzero(~(res <= limit))
    if bad.size:
        e = int(bad[np.argmax(res[bad])]) if np.all(np.isfinite(res[bad])) else int(bad[0])
        raise LocalSolveError(f"local polarization update failed in element {e}: residual {res[e]:.3e} A/m")
    out = J[0] if single else J
    if return_info:
        info = LocalSolveInfo(H[0] if single else H, iters, res)
        return out, info
    return out


def loss_density(J: npt.ArrayLike, J_prev: npt.ArrayLike, m: MaterialModel, tau: float) -> np.ndarray | float:
    """Dissipated power density (1/tau) sum_k chi_k |J_k - J_prev,k| in W/m^3."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    d = np.asarray(J, dtype=float) - np.asarray(J_prev, dtype=float)
    return np.sum(m.chi * np.linalg.norm(d, axis=-1), axis=-1) / tau

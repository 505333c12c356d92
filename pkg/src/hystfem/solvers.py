"""Global solvers for one load step of the joint (A, J) minimization.

Both solvers minimize

    f(A, J) = sum_e area_e [nu0/2 |B_e - sum_k J_ek|^2 + sum_k U_k(J_ek) + chi_k |J_ek - Jp_ek|_eps]

with B = Curl A and the wall values of A fixed.

* ``newton_solve``: Newton directions from the full Hessian, with the
  polarization block eliminated element by element, and Armijo backtracking.
* ``bcd_solve``: alternate exact minimization in A (one solve with the fixed
  nu0 stiffness) and in J (element-local problems).
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
import numpy.typing as npt

from .femcore import (
    Discretization,
    ElementTerms,
    PotentialField,
    assemble_tangent,
    element_terms,
    gradient,
    kkt_violation,
    objective_from,
    residual_norms,
)
from .linsolve import Factorization
from .material import LocalSolveError, MaterialModel, PolarizationState, local_polarization_update


class SolverError(RuntimeError):
    """A global solver failed to produce an acceptable iterate."""


class LineSearchError(SolverError):
    pass


@dataclasses.dataclass(frozen=True)
class NewtonConfig:
    sigma: float = 0.1
    q: float = 0.5
    rel_tol: float = 1e-6
    max_iter: int = 100
    max_backtracks: int = 60
    res_tol: float = 1e-12  # scaled first-order residual that ends the iteration early
    stop_res: float = 1e-6  # the decrease rule only stops once the scaled residual is below this
    # re-minimize J element by element after every accepted step
    local_refresh: bool = True
    reduced_search: bool = True  # evaluate trial points with re-minimized J

    def __post_init__(self) -> None:
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1 or self.max_backtracks < 1:
            raise ValueError("max_iter and max_backtracks must be at least 1")


@dataclasses.dataclass(frozen=True)
class BCDConfig:
    rel_tol: float = 1e-6
    max_iter: int = 20000
    # optional residual requirement on top of the decrease rule; BCD stagnates
    # long before a tight cap is met, so it is off by default
    stop_res: float = float("inf")

    def __post_init__(self) -> None:
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclasses.dataclass
class SolveReport:
    solver: str
    iterations: int = 0
    objective: list[float] = dataclasses.field(default_factory=list)  # f before the first and after every iteration
    steps: list[float] = dataclasses.field(default_factory=list)
    backtracks: list[int] = dataclasses.field(default_factory=list)
    slopes: list[float] = dataclasses.field(default_factory=list)
    res_A: float = np.nan
    res_J: float = np.nan
    kkt: float = np.nan
    wall_time: float = 0.0
    converged: bool = False
    reason: str = ""
    H: np.ndarray | None = None  # element field of the last local update (BCD only)


# ---------------------------------------------------------------- elimination


def _inv2(a: np.ndarray) -> np.ndarray:
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    out = np.empty_like(a)
    out[..., 0, 0] = a[..., 1, 1]
    out[..., 1, 1] = a[..., 0, 0]
    out[..., 0, 1] = -a[..., 0, 1]
    out[..., 1, 0] = -a[..., 1, 0]
    return out / det[..., None, None]


@dataclasses.dataclass
class LocalTangent:
    """Element data of the Newton system after eliminating the polarizations.

    The field block reads sum_e area_e Curl(phi) . (nu_eff dB - f_eff) = 0, and
    ``recover`` returns the polarization increments for a given dB.
    """

    nu0: float
    nu_eff: np.ndarray  # (T, 2, 2)
    f_eff: np.ndarray  # (T, 2)
    D_inv: np.ndarray  # (T, K, 2, 2) inverse cell Hessians
    r: np.ndarray  # (T, K, 2) per-area polarization residuals
    M_inv: np.ndarray  # (T, 2, 2) (I + nu0 P)^-1
    P: np.ndarray  # (T, 2, 2) sum_k D_inv
    Y: np.ndarray  # (T, 2) -sum_k D_inv r_k

    def recover(self, dB: npt.ArrayLike) -> np.ndarray:
        dB = np.asarray(dB, dtype=float)
        s = np.einsum("tij,tj->ti", self.M_inv, self.Y + self.nu0 * np.einsum("tij,tj->ti", self.P, dB))
        rhs = -self.r + (self.nu0 * (dB - s))[:, None, :]
        return np.einsum("tkij,tkj->tki", self.D_inv, rhs)


def tangent_from_terms(terms: ElementTerms, nu0: float) -> LocalTangent:
    h = terms.cell_hess
    D = np.empty(h.shape[:2] + (2, 2))
    D[..., 0, 0] = h[..., 0]
    D[..., 0, 1] = D[..., 1, 0] = h[..., 1]
    D[..., 1, 1] = h[..., 2]
    det = D[..., 0, 0] * D[..., 1, 1] - D[..., 0, 1] ** 2
    if not np.all((det > 0) & (D[..., 0, 0] > 0)):
        e, k = np.argwhere(~((det > 0) & (D[..., 0, 0] > 0)))[0]
        raise SolverError(f"singular local Hessian in element {e}, cell {k}")
    D_inv = _inv2(D)
    P = D_inv.sum(axis=1)
    M_inv = _inv2(np.eye(2) + nu0 * P)
    nu_eff = nu0 * M_inv
    nu_eff = 0.5 * (nu_eff + np.swapaxes(nu_eff, -1, -2))
    r = terms.residual_J
    Y = -np.einsum("tkij,tkj->ti", D_inv, r)
    f_eff = -terms.H + np.einsum("tij,tj->ti", nu_eff, Y)
    return LocalTangent(nu0, nu_eff, f_eff, D_inv, r, M_inv, P, Y)


def local_tangent(B: npt.ArrayLike, J: npt.ArrayLike, J_p: npt.ArrayLike, m: MaterialModel) -> LocalTangent:
    """Eliminated tangent for one element (B of shape (2,)) or a batch ((T, 2))."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    T = len(B)
    J = np.asarray(J, dtype=float).reshape(T, m.K, 2)
    J_p = np.asarray(J_p, dtype=float).reshape(T, m.K, 2)
    state = PolarizationState(J.copy(), J_p.copy())
    state.check_domain(m)
    return tangent_from_terms(element_terms(B, state, m), m.nu0)


# ---------------------------------------------------------------- helpers


def _finish(report: SolveReport, disc: Discretization, a: PotentialField, state: PolarizationState,
            m: MaterialModel, t0: float) -> None:
    terms = element_terms(disc.curl(a), state, m)
    report.res_A, report.res_J = residual_norms(disc, terms, m)
    report.kkt = kkt_violation(terms, state, m)
    report.wall_time = time.perf_counter() - t0


def _refresh(B: np.ndarray, state: PolarizationState, m: MaterialModel,
             H: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    try:
        J, info = local_polarization_update(B, state.J_prev, m, J0=state.J, H0=H, return_info=True)
    except LocalSolveError as exc:
        raise SolverError(str(exc)) from exc
    return J, info.H


def _require_regularized(m: MaterialModel) -> None:
    if np.any(m.eps <= 0):
        raise SolverError("field solvers need eps > 0 in every cell")


# ---------------------------------------------------------------- Newton


def newton_solve(
    disc: Discretization,
    a0: PotentialField,
    state0: PolarizationState,
    m: MaterialModel,
    cfg: NewtonConfig = NewtonConfig(),
    walls: npt.ArrayLike | None = None,
) -> tuple[PotentialField, PolarizationState, SolveReport]:
    """Minimize f for fixed J_prev starting at (a0, state0); wall constants default to a0's."""
    t0 = time.perf_counter()
    _require_regularized(m)
    state0.check_domain(m)
    a = a0.copy()
    if walls is not None:
        a.walls = np.asarray(walls, dtype=float).copy()
    state = state0.copy()
    report = SolveReport("newton")
    B = disc.curl(a)
    f = objective_from(disc, B, state.J, state.J_prev, m)
    f0 = f  # scale of the decrease rule, taken before the refresh
    H = None
    if cfg.local_refresh:
        state.J, H = _refresh(B, state, m, H)
        f = objective_from(disc, B, state.J, state.J_prev, m)
    report.objective.append(f)
    for it in range(1, cfg.max_iter + 1):
        terms = element_terms(B, state, m)
        if max(residual_norms(disc, terms, m)) <= cfg.res_tol:
            report.converged, report.reason = True, "residual"
            break
        tan = tangent_from_terms(terms, m.nu0)
        K = assemble_tangent(disc, tan.nu_eff)
        dA = Factorization(K).solve(disc.load(tan.f_eff))
        dB = disc.curl_free(dA)
        dJ = tan.recover(dB)
        g = gradient(disc, a, state, m, terms)
        slope = float(g.A @ dA + np.sum(g.J * dJ))
        report.iterations = it
        if not slope < 0:
            # a zero direction means the iterate is already stationary
            if not np.any(dA) and not np.any(dJ):
                report.converged, report.reason = True, "stationary"
                break
            raise LineSearchError(f"Newton direction is not a descent direction: slope {slope:.3e}")
        tau = 1.0
        for nb in range(cfg.max_backtracks + 1):
            if cfg.reduced_search:
                Bt = B + tau * dB
                try:
                    Jt, Ht = _refresh(Bt, state, m, H)
                except SolverError:
                    ft = np.inf
                else:
                    ft = objective_from(disc, Bt, Jt, state.J_prev, m)
            else:
                ft = objective_from(disc, B + tau * dB, state.J + tau * dJ, state.J_prev, m)
            if ft <= f + cfg.sigma * tau * slope:
                break
            tau *= cfg.q
        else:
            raise LineSearchError(
                f"Armijo backtracking failed after {cfg.max_backtracks} reductions: phi(0)={f:.10e}, phi'(0)={slope:.3e}"
            )
        assert slope < 0 and ft <= f + cfg.sigma * tau * slope
        a.free = a.free + tau * dA
        state.J = state.J + tau * dJ
        B = B + tau * dB
        if cfg.reduced_search:
            state.J, H = Jt, Ht
        elif cfg.local_refresh:
            state.J, H = _refresh(B, state, m, H)
            ft = objective_from(disc, B, state.J, state.J_prev, m)
        decrease = f - ft
        f = ft
        report.objective.append(f)
        report.steps.append(tau)
        report.backtracks.append(nb)
        report.slopes.append(slope)
        if decrease < cfg.rel_tol * f0:
            if max(residual_norms(disc, element_terms(B, state, m), m)) <= cfg.stop_res:
                report.converged, report.reason = True, "objective decrease"
                break
    else:
        report.reason = "max_iter"
    _finish(report, disc, a, state, m, t0)
    if not report.converged:
        raise SolverError(f"Newton did not converge in {cfg.max_iter} iterations")
    return a, state, report


# ---------------------------------------------------------------- BCD


def nu0_factorization(disc: Discretization, m: MaterialModel) -> Factorization:
    """Factorization of the constant nu0 stiffness; valid for every iteration and load step."""
    return Factorization(assemble_tangent(disc, m.nu0))


def bcd_solve(
    disc: Discretization,
    a0: PotentialField,
    state0: PolarizationState,
    m: MaterialModel,
    cfg: BCDConfig = BCDConfig(),
    walls: npt.ArrayLike | None = None,
    factorization: Factorization | None = None,
    H0: np.ndarray | None = None,
) -> tuple[PotentialField, PolarizationState, SolveReport]:
    """Block-coordinate descent; pass ``factorization`` to reuse it across calls.

    ``H0`` optionally seeds the element-local field iteration (the H of a
    previous solve).
    """
    t0 = time.perf_counter()
    _require_regularized(m)
    state0.check_domain(m)
    fac = nu0_factorization(disc, m) if factorization is None else factorization
    a = a0.copy()
    if walls is not None:
        a.walls = np.asarray(walls, dtype=float).copy()
    state = state0.copy()
    report = SolveReport("bcd")
    B = disc.curl(a)
    f = objective_from(disc, B, state.J, state.J_prev, m)
    f0 = f
    report.objective.append(f)
    H = H0
    for it in range(1, cfg.max_iter + 1):
        # exact minimization in A: the objective is quadratic with Hessian nu0 K
        S = state.J.sum(axis=1)
        gA = disc.load(m.nu0 * (B - S))
        dA = fac.solve(-gA)
        a.free = a.free + dA
        B = B + disc.curl_free(dA)
        f_half = objective_from(disc, B, state.J, state.J_prev, m)
        try:
            J, info = local_polarization_update(B, state.J_prev, m, J0=state.J, H0=H, return_info=True)
        except LocalSolveError as exc:
            raise SolverError(f"polarization update failed in iteration {it}: {exc}") from exc
        H = info.H
        state.J = J
        ft = objective_from(disc, B, state.J, state.J_prev, m)
        report.iterations = it
        slack = 1e-12 * abs(f)
        if not (f_half <= f + slack and ft <= f_half + slack):
            raise SolverError(f"objective increased in iteration {it}: {f:.12e} -> {f_half:.12e} -> {ft:.12e}")
        decrease = f - ft
        f = ft
        report.objective.append(f)
        if decrease < cfg.rel_tol * f0:
            if cfg.stop_res == float("inf") or max(residual_norms(disc, element_terms(B, state, m), m)) <= cfg.stop_res:
                report.converged, report.reason = True, "objective decrease"
                break
    else:
        report.reason = "max_iter"
    _finish(report, disc, a, state, m, t0)
    report.H = H
    if not report.converged:
        raise SolverError(f"BCD did not converge in {cfg.max_iter} iterations")
    return a, state, report

"""Oracle-based self-checks behind ``hystfem verify``."""

from __future__ import annotations

import dataclasses
import time
from typing import Callable

import numpy as np

from . import oracle
from .driver import LoadCycle
from .femcore import (
    Discretization,
    PotentialField,
    gradient,
    lift_walls,
    objective_value,
    wall_constants,
)
from .material import (
    CellParams,
    MaterialModel,
    PolarizationState,
    cell_update_H,
    energy_density,
    energy_gradient,
    energy_hessian,
    local_polarization_update,
)
from .mesh import generate_tjoint
from .solvers import BCDConfig, NewtonConfig, bcd_solve, newton_solve, nu0_factorization


@dataclasses.dataclass
class Check:
    name: str
    value: float
    tol: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tol)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(np.linalg.norm(np.ravel(b)), 1e-300))


def random_cell(rng: np.random.Generator, eps: float = 1e-6) -> CellParams:
    return CellParams(A_s=float(rng.uniform(20, 120)), J_s=float(rng.uniform(0.05, 0.6)),
                      chi=float(rng.uniform(0, 60)), eps=eps, form_coeff=int(rng.integers(1, 3)))


def random_polarization(rng: np.random.Generator, J_s: float, r_max: float = 0.95) -> np.ndarray:
    r = J_s * r_max * np.sqrt(rng.uniform())
    th = rng.uniform(0, 2 * np.pi)
    return np.array([r * np.cos(th), r * np.sin(th)])


# ---------------------------------------------------------------- derivative checks


def check_energy_gradient(n: int = 100, seed: int = 1, fault: float = 0.0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p = random_cell(rng)
        J = random_polarization(rng, p.J_s, 0.9)
        h = 1e-6 * p.J_s
        fd = oracle.fd_gradient(lambda x: float(energy_density(x, p)), J, h)
        g = energy_gradient(J, p) * (1 + fault)
        worst = max(worst, _rel(g, fd))
    return Check("energy gradient vs central differences", worst, 1e-6)


def check_energy_hessian(n: int = 100, seed: int = 2) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p = random_cell(rng)
        J = random_polarization(rng, p.J_s, 0.9)
        fd = oracle.fd_jacobian(lambda x: energy_gradient(x, p), J, 1e-6 * p.J_s)
        worst = max(worst, _rel(energy_hessian(J, p), fd))
    return Check("energy Hessian vs central differences", worst, 1e-5)


def random_field_state(disc: Discretization, m: MaterialModel, rng: np.random.Generator,
                       flux_scale: float = 0.01) -> tuple[PotentialField, PolarizationState]:
    walls = wall_constants(rng.uniform(-1, 1, len(disc.gate_labels)) * flux_scale * 0, disc.mesh)
    if len(disc.gate_labels) > 1:
        phi = rng.uniform(-1, 1, len(disc.gate_labels))
        phi -= phi.mean()
        walls = wall_constants(phi * flux_scale, disc.mesh)
    a = PotentialField(rng.uniform(-1, 1, disc.n_free) * flux_scale, walls)
    J = np.stack([[random_polarization(rng, js) for js in m.J_s] for _ in range(disc.n_elements)])
    Jp = np.stack([[random_polarization(rng, js) for js in m.J_s] for _ in range(disc.n_elements)])
    return a, PolarizationState(J, Jp)


def check_assembled_residual(n: int = 100, seed: int = 3, fault: float = 0.0) -> Check:
    """Assembled derivative of the discrete objective against central differences, all unknowns at once."""
    rng = np.random.default_rng(seed)
    mesh = oracle.gated_square_mesh(0.01)
    disc = Discretization(mesh)
    m = MaterialModel.five_cell(eps=1e-4, form_coeff=1)
    worst = 0.0
    for _ in range(n):
        a, st = random_field_state(disc, m, rng)
        g = gradient(disc, a, st, m)
        nA = disc.n_free

        def f(x: np.ndarray) -> float:
            aa = PotentialField(x[:nA], a.walls)
            ss = PolarizationState(x[nA:].reshape(st.J.shape), st.J_prev)
            return objective_value(disc, aa, ss, m)

        x0 = np.concatenate([a.free, st.J.ravel()])
        # one directional derivative per state along a random direction scaled per block
        d = np.concatenate([rng.normal(size=nA) * 1e-3, rng.normal(size=st.J.size) * 1e-2])
        h = 1e-4
        fd = (f(x0 + h * d) - f(x0 - h * d)) / (2 * h)
        an = float(np.concatenate([g.A, g.J.ravel()]) @ d) * (1 + fault)
        worst = max(worst, abs(an - fd) / abs(fd))
    return Check("assembled residual vs central differences", worst, 1e-7)


# ---------------------------------------------------------------- minimizer checks


def check_cell_minimizer(n: int = 100, seed: int = 4) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p = random_cell(rng, eps=1e-10)
        Jp = random_polarization(rng, p.J_s, 0.8)
        H = rng.normal(0, 2 * p.A_s, 2)
        worst = max(worst, float(np.max(np.abs(oracle.brute_force_cell_min(H, Jp, p) - cell_update_H(H, Jp, p)))))
    return Check("cell update vs exhaustive search (T)", worst, 1e-6)


def check_anhysteretic(n: int = 50, seed: int = 5) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p = random_cell(rng).with_(chi=0.0)
        h = float(rng.normal(0, 3 * p.A_s))
        J = cell_update_H(np.array([h, 0.0]), np.zeros(2), p)
        worst = max(worst, abs(J[0] - oracle.anhysteretic_root(h, p)) + abs(J[1]))
    return Check("chi = 0 update vs anhysteretic root (T)", worst, 1e-9)


def check_element_minimizer(n: int = 10, seed: int = 6) -> Check:
    rng = np.random.default_rng(seed)
    base = MaterialModel.five_cell(eps=1e-6, form_coeff=1)
    worst = 0.0
    for _ in range(n):
        idx = rng.choice(5, size=2, replace=False)
        m = MaterialModel(tuple(base.cells[i] for i in idx))
        Jp = np.stack([random_polarization(rng, js, 0.8) for js in m.J_s])
        B = rng.normal(0, 0.4, 2)
        ref = oracle.brute_force_element_min(B, Jp, m)
        worst = max(worst, float(np.max(np.abs(ref - local_polarization_update(B, Jp, m)))))
    return Check("two-cell element update vs reference minimization (T)", worst, 1e-6)


def play_trace(p: CellParams, amplitude: float, n: int = 400, periods: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Colinear drive H(t) = amplitude sin(2 pi t) through the vector cell update."""
    t = np.linspace(0, periods, n + 1)[1:]
    H = amplitude * np.sin(2 * np.pi * t)
    J = np.zeros(2)
    out = np.empty(n)
    for i, h in enumerate(H):
        J = cell_update_H(np.array([h, 0.0]), J, p)
        out[i] = J[0]
    return H, out


def check_play_operator(seed: int = 7) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        p = random_cell(rng, eps=0.0).with_(chi=float(rng.uniform(5, 60)))
        H, J = play_trace(p, amplitude=float(rng.uniform(2, 8)) * p.chi)
        worst = max(worst, float(np.max(np.abs(J - oracle.scalar_play_reference(H, p)))))
    return Check("colinear cell updates vs analytic play operator (T)", worst, 1e-10)


def tiny_case(K: int, seed: int) -> tuple[Discretization, MaterialModel, PolarizationState, PotentialField]:
    rng = np.random.default_rng(seed)
    base = MaterialModel.five_cell(eps=1e-6, form_coeff=1)
    m = MaterialModel(base.cells[1:1 + 2 * K:2])
    mesh = oracle.two_triangle_mesh()
    disc = Discretization(mesh)
    Jp = np.stack([[random_polarization(rng, js, 0.5) for js in m.J_s] for _ in range(disc.n_elements)])
    a0 = disc.zero_field(wall_constants(np.zeros(1), mesh))
    return disc, m, PolarizationState(Jp.copy(), Jp.copy()), a0


TINY_NEWTON = NewtonConfig(rel_tol=1e-14, stop_res=1e-8)
TINY_BCD = BCDConfig(rel_tol=1e-14, stop_res=1e-8, max_iter=500_000)


def tiny_reference(disc: Discretization, m: MaterialModel, st: PolarizationState,
                   a: PotentialField) -> tuple[np.ndarray, np.ndarray]:
    A_nodal = disc.nodal(a)
    free = set(disc.free_nodes.tolist())
    prob = oracle.TinyProblem(disc.mesh, m, st.J_prev, {i: A_nodal[i] for i in range(disc.mesh.n_nodes) if i not in free})
    return prob.split(prob.minimize())


def tiny_errors(disc: Discretization, a: PotentialField, st: PolarizationState,
                A_ref: np.ndarray, J_ref: np.ndarray) -> float:
    eA = np.max(np.abs(disc.nodal(a) - A_ref)) / np.max(np.abs(A_ref))
    eJ = np.max(np.abs(st.J - J_ref)) / np.max(np.abs(J_ref))
    return float(max(eA, eJ))


def check_tiny_global(solver: str, K: int = 2, seed: int = 8) -> Check:
    disc, m, st, a0 = tiny_case(K, seed)
    if solver == "newton":
        a, s, _ = newton_solve(disc, a0, st, m, TINY_NEWTON)
    else:
        a, s, _ = bcd_solve(disc, a0, st, m, TINY_BCD)
    A_ref, J_ref = tiny_reference(disc, m, st, a)
    return Check(f"two-triangle {solver} ({K} cells) vs global minimization", tiny_errors(disc, a, s, A_ref, J_ref), 1e-6)


# ---------------------------------------------------------------- benchmark step


def check_benchmark_step(t: float = 0.25) -> Check:
    """One coarse T-joint step from the demagnetized state.

    The Newton solution must be a fixed point of the BCD sweep. Comparing
    against a BCD run from scratch is not sharp: the objective is so flat that
    BCD reaches the rounding floor of f while B still differs at 1e-4.
    """
    m = MaterialModel.five_cell(form_coeff=1)
    mesh = generate_tjoint()
    disc = Discretization(mesh)
    fac = nu0_factorization(disc, m)
    walls = wall_constants(LoadCycle().fluxes(t), mesh)
    a0 = lift_walls(disc, disc.zero_field(), walls, fac, m.nu0)
    st = PolarizationState.demagnetized(disc.n_elements, m.K)
    aN, sN, _ = newton_solve(disc, a0, st, m)
    aB, _, _ = bcd_solve(disc, aN, sN, m, factorization=fac)
    BN, BB = disc.curl(aN), disc.curl(aB)
    return Check("coarse step: BCD sweep from the Newton solution (relative B change)", _rel(BB, BN), 1e-9)


QUICK: list[Callable[..., Check]] = [
    check_energy_gradient,
    check_energy_hessian,
    check_assembled_residual,
    check_cell_minimizer,
    check_anhysteretic,
    check_element_minimizer,
    check_play_operator,
    lambda: check_tiny_global("newton"),
    lambda: check_tiny_global("bcd", K=1),
]
FULL: list[Callable[..., Check]] = QUICK + [lambda: check_tiny_global("bcd", K=2), check_benchmark_step]


def run_checks(level: str = "quick", fault: str | None = None,
               report: Callable[[Check], None] | None = None) -> list[Check]:
    """Run the suite; ``fault='gradient'`` perturbs the analytic derivatives to exercise the failure path."""
    if level not in ("quick", "full"):
        raise ValueError("level must be quick or full")
    out = []
    for fn in QUICK if level == "quick" else FULL:
        t0 = time.perf_counter()
        if fault == "gradient" and fn in (check_energy_gradient, check_assembled_residual):
            c = fn(fault=1e-3)
        else:
            c = fn()
        c.seconds = time.perf_counter() - t0
        out.append(c)
        if report is not None:
            report(c)
    return out

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hystfem import oracle
from hystfem.femcore import (
    Discretization,
    PotentialField,
    assemble_tangent,
    element_terms,
    gradient,
    lift_walls,
    objective_value,
    residual_norms,
    wall_constants,
)
from hystfem.linsolve import Factorization
from hystfem.material import MaterialModel, PolarizationState
from hystfem.solvers import (
    BCDConfig,
    NewtonConfig,
    SolverError,
    bcd_solve,
    local_tangent,
    newton_solve,
    nu0_factorization,
    tangent_from_terms,
)
from hystfem.verify import TINY_NEWTON, random_field_state, tiny_case, tiny_errors, tiny_reference


@pytest.fixture(scope="module")
def square():
    d = Discretization(oracle.gated_square_mesh(0.01))
    m = MaterialModel.five_cell(eps=1e-6, form_coeff=1)
    return d, m


def _loaded(d, m, flux, seed=0):
    """Square with gate flux and a random remanent pinning state (uniform fields otherwise)."""
    rng = np.random.default_rng(seed)
    fac = nu0_factorization(d, m)
    a = lift_walls(d, d.zero_field(), wall_constants([flux, -flux], d.mesh), fac, m.nu0)
    if seed is None:
        return a, PolarizationState.demagnetized(d.n_elements, m.K), fac
    Jp = np.stack([[oracle_point(rng, js) for js in m.J_s] for _ in range(d.n_elements)])
    return a, PolarizationState(Jp.copy(), Jp.copy()), fac


def test_eliminated_newton_step_solves_full_system(square, rng):
    d, m = square
    a, s = random_field_state(d, m, rng)
    nA = d.n_free

    def grad_vec(x):
        aa = PotentialField(x[:nA], a.walls)
        ss = PolarizationState(x[nA:].reshape(s.J.shape), s.J_prev)
        g = gradient(d, aa, ss, m)
        return np.concatenate([g.A, g.J.ravel()])

    x0 = np.concatenate([a.free, s.J.ravel()])
    Hfull = oracle.fd_jacobian(grad_vec, x0, 1e-7)
    Hfull = 0.5 * (Hfull + Hfull.T)
    full = np.linalg.solve(Hfull, -grad_vec(x0))

    terms = element_terms(d.curl(a), s, m)
    tan = tangent_from_terms(terms, m.nu0)
    dA = np.linalg.solve(assemble_tangent(d, tan.nu_eff).toarray(), d.load(tan.f_eff))
    dJ = tan.recover(d.curl_free(dA))
    ours = np.concatenate([dA, dJ.ravel()])
    assert np.linalg.norm(ours - full) <= 1e-5 * np.linalg.norm(full)


def test_local_tangent_is_spd_and_softer_than_air(rng):
    m = MaterialModel.five_cell(form_coeff=1)
    B = rng.normal(0, 0.5, (20, 2))
    J = np.zeros((20, m.K, 2))
    tan = local_tangent(B, J + 1e-3, J, m)
    w = np.linalg.eigvalsh(tan.nu_eff)
    assert np.all(w > 0) and np.all(w <= m.nu0 * (1 + 1e-12))


@pytest.mark.parametrize("K", [1, 2])
@pytest.mark.parametrize("seed", [8, 9])
def test_tiny_newton_matches_global_minimization(K, seed):
    d, m, s, a0 = tiny_case(K, seed)
    a, sol, rep = newton_solve(d, a0, s, m, TINY_NEWTON)
    A_ref, J_ref = tiny_reference(d, m, s, a)
    assert tiny_errors(d, a, sol, A_ref, J_ref) < 1e-6


def _assert_monotone(rep, strict=True):
    f = np.array(rep.objective)
    if strict:
        assert np.all(np.diff(f) < 0), np.diff(f).max()
    else:
        assert np.all(np.diff(f) <= 1e-12 * abs(f[0]))


@pytest.mark.parametrize("flux", [1e-3, 2e-3, 5e-3])
def test_newton_armijo_and_descent(square, flux):
    d, m = square
    a0, s, _ = _loaded(d, m, flux)
    a, sol, rep = newton_solve(d, a0, s, m)
    assert rep.converged
    _assert_monotone(rep)
    f = np.array(rep.objective)
    for i, (tau, slope) in enumerate(zip(rep.steps, rep.slopes)):
        assert slope < 0
        assert f[i + 1] <= f[i] + 0.1 * tau * slope
    assert max(rep.res_A, rep.res_J) <= 1e-6
    assert objective_value(d, a, sol, m) == pytest.approx(f[-1], rel=1e-14)


def test_newton_without_reduced_search_agrees(square):
    d, m = square
    a0, s, _ = _loaded(d, m, 3e-3)
    tight = dict(rel_tol=1e-13, stop_res=1e-9)
    a1, s1, _ = newton_solve(d, a0, s, m, NewtonConfig(**tight))
    a2, s2, r2 = newton_solve(d, a0, s, m, NewtonConfig(reduced_search=False, **tight))
    np.testing.assert_allclose(d.curl(a2), d.curl(a1), rtol=0, atol=1e-7 * np.abs(d.curl(a1)).max())
    _assert_monotone(r2)


def test_bcd_descent_and_fixed_point(square):
    d, m = square
    a0, s, fac = _loaded(d, m, 3e-3)
    aB, sB, rB = bcd_solve(d, a0, s, m, factorization=fac)
    _assert_monotone(rB, strict=False)
    aN, sN, rN = newton_solve(d, a0, s, m)
    assert rN.objective[-1] <= rB.objective[-1] + 1e-12 * abs(rB.objective[0])
    # a BCD sweep from the Newton solution does not move it
    aF, _, rF = bcd_solve(d, aN, sN, m, factorization=fac)
    assert rF.iterations == 1
    np.testing.assert_allclose(d.curl(aF), d.curl(aN), atol=1e-9 * np.abs(d.curl(aN)).max())


def test_solvers_need_regularization(square):
    d, _ = square
    m0 = MaterialModel.five_cell(eps=0.0, form_coeff=1)
    s = PolarizationState.demagnetized(d.n_elements, m0.K)
    for solve in (newton_solve, bcd_solve):
        with pytest.raises(SolverError, match="eps > 0"):
            solve(d, d.zero_field(), s, m0)


def test_newton_iteration_cap(tjoint_disc):
    d = tjoint_disc
    m = MaterialModel.five_cell(form_coeff=1)
    a0, s, _ = _loaded3(d, m, [0.3, -0.15, -0.15])
    with pytest.raises(SolverError, match="did not converge"):
        newton_solve(d, a0, s, m, NewtonConfig(max_iter=1, rel_tol=1e-15))


def _loaded3(d, m, phi):
    fac = nu0_factorization(d, m)
    a = lift_walls(d, d.zero_field(), wall_constants(phi, d.mesh), fac, m.nu0)
    return a, PolarizationState.demagnetized(d.n_elements, m.K), fac


def test_uniform_square_is_solved_by_the_local_update(square):
    d, m = square
    a0, s, _ = _loaded(d, m, 3e-3, seed=None)
    _, _, rep = newton_solve(d, a0, s, m)
    assert rep.converged and rep.reason == "residual" and rep.iterations == 0


def test_zero_load_is_immediately_stationary(square):
    d, m = square
    s = PolarizationState.demagnetized(d.n_elements, m.K)
    a, sol, rep = newton_solve(d, d.zero_field(), s, m)
    assert rep.converged and rep.iterations <= 1
    assert np.all(sol.J == 0)


@pytest.mark.parametrize(
    "cls, kw",
    [
        (NewtonConfig, dict(sigma=0.0)),
        (NewtonConfig, dict(q=1.0)),
        (NewtonConfig, dict(rel_tol=0.0)),
        (NewtonConfig, dict(max_iter=0)),
        (BCDConfig, dict(rel_tol=-1.0)),
        (BCDConfig, dict(max_iter=0)),
    ],
)
def test_config_validation(cls, kw):
    with pytest.raises(ValueError):
        cls(**kw)


@settings(max_examples=10)
@given(st.floats(-6e-3, 6e-3), st.integers(0, 2**32 - 1))
def test_newton_never_increases_objective(square, flux, seed):
    d, m = square
    a0, s, _ = _loaded(d, m, flux, seed)
    _, _, rep = newton_solve(d, a0, s, m)
    _assert_monotone(rep)


def oracle_point(rng, js):
    r = 0.5 * js * np.sqrt(rng.uniform())
    t = rng.uniform(0, 2 * np.pi)
    return np.array([r * np.cos(t), r * np.sin(t)])


def test_factorization_reused_by_bcd(square):
    d, m = square
    fac = nu0_factorization(d, m)
    assert fac.matches(assemble_tangent(d, m.nu0))
    assert isinstance(fac, Factorization)
    a0, s, _ = _loaded(d, m, 1e-3)
    _, _, rep = bcd_solve(d, a0, s, m, factorization=fac)
    terms_ok = np.isfinite(rep.res_A) and np.isfinite(rep.res_J)
    assert terms_ok and rep.converged

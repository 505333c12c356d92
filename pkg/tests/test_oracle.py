"""The oracles are checked on problems whose answers are known in closed form."""

import math

import numpy as np
import pytest

from hystfem import oracle
from hystfem.femcore import Discretization, gradient, objective_value
from hystfem.material import CellParams, MaterialModel, PolarizationState, anhysteretic
from hystfem.verify import random_field_state


def test_derivative_helpers_on_smooth_functions():
    f = lambda x: np.exp(x[0]) * np.sin(x[1])  # noqa: E731
    x = np.array([0.3, -1.1])
    exact = np.array([np.exp(0.3) * np.sin(-1.1), np.exp(0.3) * np.cos(-1.1)])
    np.testing.assert_allclose(oracle.fd_gradient(f, x), exact, rtol=1e-9)
    np.testing.assert_allclose(oracle.complex_step_gradient(f, x), exact, rtol=1e-15)
    J = oracle.fd_jacobian(lambda z: np.array([z[0] * z[1], z[1] ** 2]), x)
    np.testing.assert_allclose(J, [[x[1], x[0]], [0, 2 * x[1]]], rtol=1e-8)


def test_zoom_minimize_quadratic():
    c = np.array([0.123456789, -0.987654321])
    best = oracle.zoom_minimize(lambda p: np.sum((p - c) ** 2, axis=1), [-1, -1], [1, 1])
    np.testing.assert_allclose(best, c, atol=1e-12)
    with pytest.raises(ValueError, match="feasible"):
        oracle.zoom_minimize(lambda p: np.full(len(p), np.inf), [0, 0], [1, 1])


def test_newton_polish_reaches_rosenbrock_minimum():
    f = lambda z: (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2  # noqa: E731
    np.testing.assert_allclose(oracle.newton_polish(f, [0.9, 0.8], 100), [1, 1], atol=1e-10)


@pytest.mark.parametrize("h", [-400.0, -3.0, 0.0, 17.0, 2500.0])
def test_anhysteretic_root_matches_closed_form(h):
    p = CellParams(65.0, 0.3, 0.0, form_coeff=2)
    assert oracle.anhysteretic_root(h, p) == pytest.approx(float(anhysteretic(h, p)), abs=1e-15)


def test_cell_search_without_pinning_is_anhysteretic():
    p = CellParams(65.0, 0.3, 0.0, eps=0.0, form_coeff=1)
    H = np.array([30.0, -40.0])
    r = float(anhysteretic(50.0, p))
    np.testing.assert_allclose(oracle.brute_force_cell_min(H, np.zeros(2), p), r * H / 50.0, atol=1e-9)


def test_play_reference_by_hand():
    p = CellParams(2.0, 1.0, 3.0, eps=0.0, form_coeff=1)  # U'(J) = tan(pi J / 2)
    H = [2.0, 4.0, 3.5, 0.0, -2.9, -4.0]
    J = oracle.scalar_play_reference(H, p)
    inv = lambda h: 2 / math.pi * math.atan(h)  # noqa: E731
    # stays pinned at H = 3.5 and 0.0; H = -2.9 drives 3.9 > chi below U'(0.5) = 1
    expect = [0.0, inv(1.0), inv(1.0), inv(1.0), inv(0.1), inv(-1.0)]
    np.testing.assert_allclose(J, expect, atol=1e-15)
    with pytest.raises(ValueError):
        oracle.scalar_play_reference(H, p.with_(eps=1e-6))


def test_play_multi_shape():
    m = MaterialModel.five_cell(form_coeff=1)
    assert oracle.scalar_play_multi(np.linspace(0, 300, 7), m).shape == (7, 5)


def test_tiny_objective_agrees_with_package(rng):
    """Two independent codings of the discrete objective agree, value and gradient."""
    mesh = oracle.gated_square_mesh()
    d = Discretization(mesh)
    m = MaterialModel.five_cell(eps=1e-4, form_coeff=1)
    a, s = random_field_state(d, m, rng)
    A = d.nodal(a)
    prob = oracle.TinyProblem(mesh, m, s.J_prev, {int(i): A[i] for i in range(mesh.n_nodes) if d.wall_of_node[i] >= 0})
    x = np.concatenate([A[prob.free], s.J.ravel()])
    assert float(np.real(prob.objective(x))) == pytest.approx(objective_value(d, a, s, m), rel=1e-13)
    g = gradient(d, a, s, m)
    ours = np.concatenate([g.A[d.free_index[prob.free]], g.J.ravel()])
    np.testing.assert_allclose(prob.gradient(x), ours, rtol=1e-9, atol=1e-9 * np.abs(ours).max())


def test_tiny_minimize_is_stationary():
    mesh = oracle.two_triangle_mesh()
    m = MaterialModel(MaterialModel.five_cell(eps=1e-6, form_coeff=1).cells[1:2])
    Jp = np.array([[[0.1, 0.05]], [[-0.02, 0.12]]])
    prob = oracle.TinyProblem(mesh, m, Jp, {0: 0.0, 3: 0.0})
    x = prob.minimize()
    assert np.linalg.norm(prob.gradient(x)) < 1e-8 * np.linalg.norm(prob.gradient(np.concatenate([[0, 0], Jp.ravel()])))

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from hystfem import oracle
from hystfem.femcore import (
    AssemblyError,
    Discretization,
    FluxError,
    PotentialField,
    assemble_tangent,
    element_stiffness,
    element_terms,
    gradient,
    kkt_violation,
    lift_walls,
    objective_value,
    residual_norms,
    wall_constants,
)
from hystfem.linsolve import Factorization
from hystfem.material import DomainError, MaterialModel, PolarizationState
from hystfem.mesh import MeshError
from hystfem.verify import random_field_state


def test_wall_constants_follow_the_boundary(tjoint):
    phi = np.array([0.3, -0.5, 0.2])
    # loop order w1 g1 w2 g2 w3 g3, w1 is the gauge
    np.testing.assert_allclose(wall_constants(phi, tjoint), [0.0, 0.3, -0.2])


def test_wall_constants_errors(tjoint):
    with pytest.raises(FluxError, match="sum to zero"):
        wall_constants([0.3, -0.2, 0.0], tjoint)
    with pytest.raises(FluxError, match="expected 3"):
        wall_constants([0.3, -0.3], tjoint)


def test_wall_constants_need_alternating_boundary():
    from hystfem.mesh import Mesh

    m = oracle.gated_square_mesh()  # w1 g1 w2 g2 around the square
    labels = ["w1" if lb == "w2" else lb for lb in m.boundary_labels]
    bad = Mesh(m.nodes, m.triangles, m.regions, m.boundary_edges, labels)
    with pytest.raises(MeshError, match="alternate"):
        wall_constants([0.1, -0.1], bad)


def test_nodal_roundtrip(tjoint_disc, rng):
    d = tjoint_disc
    a = PotentialField(rng.normal(size=d.n_free), np.array([0.0, 0.1, -0.2]))
    v = d.nodal(a)
    np.testing.assert_array_equal(v[d.free_nodes], a.free)
    for w, lb in enumerate(d.wall_labels):
        assert np.all(v[d.mesh.wall_nodes()[lb]] == a.walls[w])


def test_curl_of_linear_potential_is_uniform(tjoint_disc):
    d = tjoint_disc
    x, y = d.mesh.nodes.T
    B = d.curl_nodal(0.7 * x - 1.3 * y)
    np.testing.assert_allclose(B, np.tile([-1.3, -0.7], (d.n_elements, 1)), atol=1e-12)


def test_assembly_matches_dense_element_sum(rng):
    mesh = oracle.gated_square_mesh()
    d = Discretization(mesh)
    nu = rng.normal(size=(d.n_elements, 2, 2)) * 0.2
    nu = nu @ np.swapaxes(nu, 1, 2) + np.eye(2)
    dense = np.zeros((mesh.n_nodes, mesh.n_nodes))
    for t, tri in enumerate(mesh.triangles):
        dense[np.ix_(tri, tri)] += element_stiffness(d.curls[t], d.area[t], nu[t])
    ref = dense[np.ix_(d.free_nodes, d.free_nodes)]
    K = assemble_tangent(d, nu)
    np.testing.assert_allclose(K.toarray(), ref, rtol=1e-13, atol=1e-13 * np.abs(ref).max())


def test_scalar_stiffness_is_spd(tjoint_disc):
    K = assemble_tangent(tjoint_disc, 1.0)
    assert abs(K - K.T).max() < 1e-12
    Factorization(K)  # raises if not positive definite


def test_stiffness_rows_annihilate_constants():
    mesh = oracle.gated_square_mesh()
    d = Discretization(mesh)
    # a potential constant everywhere (walls included) has zero curl
    a = PotentialField(np.full(d.n_free, 0.3), np.full(len(d.wall_labels), 0.3))
    np.testing.assert_allclose(d.curl(a), 0.0, atol=1e-12)


def test_load_is_transpose_of_curl(tjoint_disc, rng):
    d = tjoint_disc
    v = rng.normal(size=(d.n_elements, 2))
    x = rng.normal(size=d.n_free)
    lhs = d.load(v) @ x
    rhs = np.sum(d.area * np.einsum("td,td->t", v, d.curl_free(x)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_assembly_rejects_indefinite_tensors(tjoint_disc):
    nu = np.tile(np.eye(2), (tjoint_disc.n_elements, 1, 1))
    nu[5] = [[1.0, 0.0], [0.0, -1.0]]
    with pytest.raises(AssemblyError, match="triangle 5"):
        assemble_tangent(tjoint_disc, nu)
    with pytest.raises(AssemblyError, match="shape"):
        assemble_tangent(tjoint_disc, nu[:3])


@pytest.mark.parametrize("phi", [[0.6, -0.3, -0.3], [0.1, 0.2, -0.3], [0.0, 0.0, 0.0]])
def test_lift_walls_enforces_gate_fluxes(tjoint, tjoint_disc, phi):
    m = MaterialModel.five_cell(form_coeff=1)
    fac = Factorization(assemble_tangent(tjoint_disc, m.nu0))
    a = lift_walls(tjoint_disc, tjoint_disc.zero_field(), wall_constants(phi, tjoint), fac, m.nu0)
    got = tjoint_disc.gate_fluxes(tjoint_disc.curl(a))
    np.testing.assert_allclose(got, phi, atol=1e-13)
    # the free values solve the air problem
    assert np.abs(tjoint_disc.load(m.nu0 * tjoint_disc.curl(a))).max() < 1e-9 * m.nu0


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_gradient_directional_derivative(seed):
    rng = np.random.default_rng(seed)
    d = Discretization(oracle.gated_square_mesh())
    m = MaterialModel.five_cell(eps=1e-4, form_coeff=1)
    a, s = random_field_state(d, m, rng)
    g = gradient(d, a, s, m)
    dA = rng.normal(size=d.n_free) * 1e-3
    dJ = rng.normal(size=s.J.shape) * 1e-2

    def f(h):
        return objective_value(d, PotentialField(a.free + h * dA, a.walls), PolarizationState(s.J + h * dJ, s.J_prev), m)

    h = 1e-4
    fd = (f(h) - f(-h)) / (2 * h)
    assert g.A @ dA + np.sum(g.J * dJ) == pytest.approx(fd, rel=1e-7)


def test_objective_rejects_saturation(rng):
    d = Discretization(oracle.gated_square_mesh())
    m = MaterialModel.five_cell(form_coeff=1)
    s = PolarizationState.demagnetized(d.n_elements, m.K)
    s.J[0, 4] = [0.05, 0.0]
    with pytest.raises(DomainError):
        objective_value(d, d.zero_field(), s, m)


def test_residuals_and_kkt_at_local_minimizer():
    from hystfem.material import local_polarization_update

    d = Discretization(oracle.gated_square_mesh())
    m = MaterialModel.five_cell(form_coeff=1)
    a = lift_walls(d, d.zero_field(), wall_constants([0.01, -0.01], d.mesh), Factorization(assemble_tangent(d, 1.0)), 1.0)
    B = d.curl(a)
    s = PolarizationState.demagnetized(d.n_elements, m.K)
    s.J = local_polarization_update(B, s.J_prev, m)
    terms = element_terms(B, s, m)
    assert residual_norms(d, terms, m)[1] < 1e-9
    assert kkt_violation(terms, s, m) <= 1e-6 * m.chi.max()
    # the air solution on the square is uniform, so uniform J leaves it balanced
    assert residual_norms(d, terms, m)[0] < 1e-9


def test_gate_fluxes_sum_to_zero_for_any_field(tjoint_disc, rng):
    a = PotentialField(rng.normal(size=tjoint_disc.n_free), np.array([0.0, 0.4, -0.1]))
    phi = tjoint_disc.gate_fluxes(tjoint_disc.curl(a))
    assert abs(phi.sum()) < 1e-12
    np.testing.assert_allclose(phi, [0.4, -0.5, 0.1], atol=1e-12)


def test_sparse_pattern_is_csr(tjoint_disc):
    K = assemble_tangent(tjoint_disc, 2.0)
    assert sp.isspmatrix_csr(K) and K.shape == (510, 510)

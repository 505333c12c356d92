import numpy as np
import pytest
from hypothesis import given, strategies as st

from hystfem.mesh import (
    Mesh,
    MeshError,
    TJointParams,
    dump_mesh,
    element_geometry,
    euler_characteristic,
    generate_tjoint,
    label_counts,
    load_mesh,
    loop_polygon,
    n_free_nodes,
    polygon_area,
    refine_uniform,
)
from hystfem.oracle import gated_square_mesh, two_triangle_mesh


def test_tjoint_shape(tjoint):
    assert tjoint.n_nodes == 672
    assert tjoint.n_triangles == 1162
    assert n_free_nodes(tjoint) == 510
    assert euler_characteristic(tjoint) == 1
    assert tjoint.wall_labels == ["w1", "w2", "w3"]
    assert tjoint.gate_labels == ["g1", "g2", "g3"]
    assert [lb for lb, _ in tjoint.boundary_loop()] == ["w1", "g1", "w2", "g2", "w3", "g3"]


def test_tjoint_area_matches_outline(tjoint):
    # 2.4 x 1.2 bounding box minus two 0.6 x 0.8 windows
    assert tjoint.areas().sum() == pytest.approx(2.4 * 1.2 - 2 * 0.6 * 0.8, rel=1e-13)
    assert polygon_area(loop_polygon(tjoint)) == pytest.approx(tjoint.areas().sum(), rel=1e-12)


def test_shipped_coarse_mesh_equals_generator(tjoint):
    from importlib import resources

    text = resources.files("hystfem").joinpath("data/tjoint_coarse.mesh").read_text()
    m = load_mesh(text)
    np.testing.assert_allclose(m.nodes, tjoint.nodes, atol=1e-15)
    np.testing.assert_array_equal(m.triangles, tjoint.triangles)
    assert m.boundary_labels == tjoint.boundary_labels


def test_dump_load_roundtrip_is_exact(tjoint):
    back = load_mesh(dump_mesh(tjoint, comment="coarse\nT-joint"))
    np.testing.assert_array_equal(back.nodes, tjoint.nodes)
    np.testing.assert_array_equal(back.triangles, tjoint.triangles)
    np.testing.assert_array_equal(back.boundary_edges, tjoint.boundary_edges)
    assert back.boundary_labels == tjoint.boundary_labels


def test_basis_gradients_partition_of_unity(tjoint):
    g = tjoint.basis_gradients()
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-10)
    # grad(lambda_i) . (x_j - x_k) reproduces delta_ij
    p = tjoint.nodes[tjoint.triangles]
    for i in range(3):
        d = np.einsum("td,tjd->tj", g[:, i], p - p[:, [0]])
        expect = np.zeros((len(p), 3)) - (1.0 if i == 0 else 0.0)
        expect[:, i] += 1.0
        np.testing.assert_allclose(d, expect, atol=1e-10)


def test_element_geometry_matches_vectorized(tjoint):
    g = tjoint.basis_gradients()
    for t in (0, 17, tjoint.n_triangles - 1):
        eg = element_geometry(tjoint, t)
        assert eg.area == pytest.approx(tjoint.areas()[t], rel=1e-14)
        np.testing.assert_allclose(eg.basis_gradients, g[t], rtol=1e-13)
    with pytest.raises(IndexError):
        element_geometry(tjoint, tjoint.n_triangles)


@pytest.mark.parametrize("levels", [1, 2])
def test_refinement_preserves_area_and_labels(levels):
    base = gated_square_mesh()
    m = base
    for _ in range(levels):
        m = refine_uniform(m)
    assert m.n_triangles == base.n_triangles * 4**levels
    assert m.areas().sum() == pytest.approx(base.areas().sum(), rel=1e-14)
    assert np.all(m.areas() > 0)
    base_counts = label_counts(base)
    assert label_counts(m) == {k: v * 2**levels for k, v in base_counts.items()}
    assert euler_characteristic(m) == 1


def test_refined_tjoint_keeps_boundary_loop(tjoint):
    m = refine_uniform(tjoint)
    assert [lb for lb, _ in m.boundary_loop()] == [lb for lb, _ in tjoint.boundary_loop()]
    assert m.n_nodes == 672 + (672 + 1162 - 1)  # one midpoint per edge


@given(st.floats(0.0, 2.4), st.floats(0.0, 1.2))
def test_locate_returns_a_containing_triangle(x, y):
    mesh = _TJ
    inside_window = y < 0.8 and (0.4 < x < 1.0 or 1.4 < x < 2.0)
    if inside_window:
        with pytest.raises(MeshError):
            mesh.locate([x, y], tol=-1e-9)
        return
    t = int(mesh.locate([x, y])[0])
    p = mesh.nodes[mesh.triangles[t]]
    T = np.column_stack([p[1] - p[0], p[2] - p[0]])
    lam = np.linalg.solve(T, np.array([x, y]) - p[0])
    assert lam.min() >= -1e-9 and lam.sum() <= 1 + 1e-9


_TJ = generate_tjoint()


def _square_parts():
    m = two_triangle_mesh()
    return m.nodes.copy(), m.triangles.copy(), m.regions.copy(), m.boundary_edges.copy(), list(m.boundary_labels)


def test_clockwise_triangle_rejected():
    nodes, tris, reg, edges, labels = _square_parts()
    tris[0] = tris[0][::-1]
    with pytest.raises(MeshError, match="non-positive signed area"):
        Mesh(nodes, tris, reg, edges, labels)


def test_unlabeled_boundary_edge_rejected():
    nodes, tris, reg, edges, labels = _square_parts()
    with pytest.raises(MeshError, match="unlabeled"):
        Mesh(nodes, tris, reg, edges[:-1], labels[:-1])


def test_interior_edge_labeled_rejected():
    nodes, tris, reg, edges, labels = _square_parts()
    shared = sorted(set(map(int, tris[0])) & set(map(int, tris[1])))
    with pytest.raises(MeshError, match="exactly one triangle"):
        Mesh(nodes, tris, reg, np.vstack([edges, [shared]]), labels + ["w1"])


@pytest.mark.parametrize("label", ["x1", "w", "gA"])
def test_bad_label_rejected(label):
    nodes, tris, reg, edges, labels = _square_parts()
    labels[0] = label
    with pytest.raises(MeshError, match="invalid boundary label"):
        Mesh(nodes, tris, reg, edges, labels)


@pytest.mark.parametrize(
    "text, match",
    [
        ("", "empty"),
        ("mesh 1 2 3", "header"),
        ("mesh2d 1 0 0\n0.0", "2 coordinates"),
        ("mesh2d 3 1 0\n0 0\n1 0\n0 1\n0 1 5 0", "out of range"),
        ("mesh2d 2 0 0\n0 0", "expected 2 data lines"),
    ],
)
def test_load_errors(text, match):
    with pytest.raises(MeshError, match=match):
        load_mesh(text)


@pytest.mark.parametrize("field", ["limb_width", "window_height", "mesh_size"])
def test_infeasible_tjoint_rejected(field):
    with pytest.raises(MeshError, match=field):
        TJointParams(**{field: 0.0})


def test_tjoint_mesh_size_controls_resolution():
    fine = generate_tjoint(TJointParams(mesh_size=0.04))
    assert fine.n_triangles > _TJ.n_triangles
    assert fine.areas().sum() == pytest.approx(_TJ.areas().sum(), rel=1e-13)

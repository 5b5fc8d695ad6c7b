import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from smaflow.errors import ConfigError, SolverError
from smaflow.mesh import (
    QuadratureRule,
    assemble_mass,
    assemble_stiffness,
    build_rect_mesh,
    element_strain,
    format_mesh,
    parse_mesh,
    solve_spd,
)


@pytest.mark.parametrize("nx,ny,nodes,tris", [(1, 1, 4, 2), (2, 2, 9, 8), (4, 2, 15, 16)])
def test_counts(nx, ny, nodes, tris):
    m = build_rect_mesh(nx, ny, 1.0, 1.0)
    assert (m.n_nodes, m.n_triangles) == (nodes, tris)


def test_area_sums():
    assert build_rect_mesh(1, 1, 1, 1).area == 1.0
    assert abs(build_rect_mesh(4, 2, 2, 1).areas.sum() - 2.0) < 1e-14


@pytest.mark.parametrize("bad", [(0, 1, 1, 1), (1, 0, 1, 1), (1, 1, 0, 1), (1, 1, 1, -2), (1.5, 1, 1, 1)])
def test_invalid_mesh(bad):
    with pytest.raises(ConfigError):
        build_rect_mesh(*bad)


def test_mesh_invariants():
    m = build_rect_mesh(5, 3, 2.0, 1.5)
    assert np.all(m.areas > 0)
    assert m.triangles.min() == 0 and m.triangles.max() == m.n_nodes - 1
    # every boundary edge lies in exactly one triangle, interior edges in two
    edges = {}
    for tri in m.triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = tuple(sorted((tri[a], tri[b])))
            edges[key] = edges.get(key, 0) + 1
    for (i, j), count in edges.items():
        on_side = m.boundary[i] and m.boundary[j] and (
            np.isclose(m.nodes[i, 0], m.nodes[j, 0]) and np.isclose(m.nodes[i, 0], 0) or
            np.isclose(m.nodes[i, 0], m.nodes[j, 0]) and np.isclose(m.nodes[i, 0], 2.0) or
            np.isclose(m.nodes[i, 1], m.nodes[j, 1]) and np.isclose(m.nodes[i, 1], 0) or
            np.isclose(m.nodes[i, 1], m.nodes[j, 1]) and np.isclose(m.nodes[i, 1], 1.5))
        assert count == (1 if on_side else 2)
    assert m.boundary.sum() == 2 * (5 + 3)
    with pytest.raises(ValueError):
        m.nodes[0, 0] = 3.0


def test_quadrature_rules():
    for rule in (QuadratureRule.midpoint(), QuadratureRule.vertex(), QuadratureRule.edge_midpoint()):
        assert np.all(rule.weights > 0) and abs(rule.weights.sum() - 1) < 1e-15
    with pytest.raises(ConfigError):
        QuadratureRule(np.eye(3), np.array([0.5, 0.5, 0.0]))


@pytest.mark.parametrize("n", [1, 3, 8])
def test_mass_partition_of_unity(n):
    m = build_rect_mesh(n, n)
    M = assemble_mass(m)
    assert abs(M.sum() - 1.0) < 1e-13
    ML = assemble_mass(m, lumped=True)
    assert abs(ML.sum() - 1.0) < 1e-13
    assert sp.triu(ML, 1).nnz == 0 and np.all(ML.diagonal() > 0)
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), ML.diagonal(), atol=1e-16)
    assert abs(M - M.T).max() == 0.0
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def test_mass_constant_field():
    m = build_rect_mesh(3, 2, 2.0, 1.0)
    x = np.full(m.n_nodes, 1.7)
    assert abs(x @ assemble_mass(m) @ x - 1.7**2 * 2.0) < 1e-13


def test_mass_matches_exact_integral_of_products():
    # oracle: exact integral of a product of two linear functions via the edge-midpoint rule
    m = build_rect_mesh(3, 4, 1.3, 0.7)
    a = m.interpolate(lambda x, y: 1 + 2 * x - y)
    b = m.interpolate(lambda x, y: 3 - x + 4 * y)
    pts = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    exact = 0.0
    for t, tri in enumerate(m.triangles):
        for q in pts:
            exact += m.areas[t] / 3 * (q @ a[tri]) * (q @ b[tri])
    assert abs(a @ assemble_mass(m) @ b - exact) < 1e-13


def test_stiffness_kernel_and_linear_energy():
    m = build_rect_mesh(6, 4)
    K = assemble_stiffness(m, np.eye(2))
    assert np.abs(K @ np.ones(m.n_nodes)).max() < 1e-13 * abs(K).max()
    x = m.nodes[:, 0]
    assert abs(x @ K @ x - 1.0) < 1e-12
    K2 = assemble_stiffness(m, 2 * np.eye(2))
    assert abs(K2 - 2 * K).max() == 0.0
    ev = np.linalg.eigvalsh(K.toarray())
    assert ev.min() > -1e-12 and np.sum(np.abs(ev) < 1e-10) == 1


def test_stiffness_anisotropic_linear_energy():
    # oracle: for u = a.x the energy is |Omega| a^T C a
    m = build_rect_mesh(3, 3, 2.0, 1.0)
    C = np.array([[2.0, 0.3], [0.3, 1.0]])
    a = np.array([0.7, -1.1])
    u = m.nodes @ a
    assert abs(u @ assemble_stiffness(m, C) @ u - 2.0 * a @ C @ a) < 1e-12


@pytest.mark.parametrize("C", [np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([[1.0, 0.1], [0.0, 1.0]]), -np.eye(2)])
def test_stiffness_rejects_non_spd(C):
    with pytest.raises(ConfigError):
        assemble_stiffness(build_rect_mesh(2, 2), C)


def test_element_strain_examples():
    m = build_rect_mesh(3, 2, 1.5, 1.0)
    x, y = m.nodes[:, 0], m.nodes[:, 1]
    np.testing.assert_allclose(element_strain(m, np.column_stack([x, 0 * x])), [[1, 0, 0]] * m.n_triangles, atol=1e-13)
    np.testing.assert_allclose(element_strain(m, np.column_stack([-y, x])), 0.0, atol=1e-13)
    np.testing.assert_allclose(element_strain(m, np.column_stack([y, x])), [[0, 1, 0]] * m.n_triangles, atol=1e-13)
    with pytest.raises(ValueError):
        element_strain(m, np.zeros((3, 2)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_affine_strain_property(c):
    m = build_rect_mesh(3, 3, 1.0, 2.0)
    G = np.array([[c[0], c[1]], [c[2], c[3]]])
    u = m.nodes @ G.T + np.array([c[4], c[5]])
    e = element_strain(m, u)
    sym = 0.5 * (G + G.T)
    np.testing.assert_allclose(e, np.tile([sym[0, 0], sym[0, 1], sym[1, 1]], (m.n_triangles, 1)), atol=1e-13)


def test_solve_spd_small():
    np.testing.assert_array_equal(solve_spd(np.eye(4), np.arange(4.0)), np.arange(4.0))
    np.testing.assert_allclose(solve_spd(np.diag([2.0, 3.0]), np.array([2.0, 3.0])), [1.0, 1.0], rtol=1e-12)
    np.testing.assert_array_equal(solve_spd(np.eye(3), np.zeros(3)), np.zeros(3))


@pytest.mark.parametrize("n", [50, 200])
def test_solve_spd_vs_dense(n):
    rng = np.random.default_rng(n)
    Q = rng.standard_normal((n, n))
    A = Q @ Q.T + n * np.eye(n)
    b = rng.standard_normal(n)
    x = solve_spd(A, b, tol=1e-12)
    ref = np.linalg.solve(A, b)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_solve_spd_singular_consistent_rhs():
    m = build_rect_mesh(4, 4)
    K = assemble_stiffness(m, np.eye(2))
    b = m.lumped_mass * (m.nodes[:, 0] - 0.5)
    b -= b.mean()
    x = solve_spd(K, b, tol=1e-10)
    assert np.linalg.norm(K @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solve_spd_failure_carries_residual():
    rng = np.random.default_rng(1)
    Q = rng.standard_normal((40, 40))
    A = Q @ Q.T + 1e-3 * np.eye(40)
    with pytest.raises(SolverError) as info:
        solve_spd(A, rng.standard_normal(40), tol=1e-14, maxiter=3)
    assert info.value.residual > 1e-14


def test_solver_determinism_and_reassembly():
    m = build_rect_mesh(8, 8)
    K1 = assemble_stiffness(m, np.eye(2)) + assemble_mass(m)
    K2 = assemble_stiffness(m, np.eye(2)) + assemble_mass(m)
    assert (K1 != K2).nnz == 0
    b = np.sin(m.nodes[:, 0])
    assert solve_spd(K1, b).tobytes() == solve_spd(K2, b).tobytes()


def test_mesh_export_round_trip():
    m = build_rect_mesh(2, 1, 1.0, 0.3)
    text = format_mesh(m)
    assert text.splitlines()[0] == "# nodes 6 triangles 4"
    nodes, tris, used = parse_mesh(text.splitlines())
    assert used == 11
    np.testing.assert_array_equal(nodes, m.nodes)
    np.testing.assert_array_equal(tris, m.triangles)

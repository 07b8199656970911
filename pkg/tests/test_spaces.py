import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from brinkman_hdiv.mesh import Mesh, build_rect_mesh, refine
from brinkman_hdiv.spaces import (DofMap, FamilyOrder, OrderNotImplemented, VelocityField, element_points,
                                  edge_points, interpolate_Rh, local_basis, piola_map, project_Ph,
                                  reference_basis, shape_values)

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def ref_field(coef, x):
    """Evaluate an affine reference field with coefficients (2, 3) on monomials (1, x, y)."""
    return coef[:, 0] + coef[:, 1] * x[0] + coef[:, 2] * x[1]


def quad_moment(coef, i, j):
    """Edge moment by adaptive scalar quadrature (independent of the package rules)."""
    a, b = REF[(i + 1) % 3], REF[(i + 2) % 3]
    d = b - a
    n = np.array([d[1], -d[0]]) / np.linalg.norm(d)

    def integrand(s):  # s in [-1, 1]
        x = 0.5 * (1 - s) * a + 0.5 * (1 + s) * b
        return ref_field(coef, x) @ n * s ** j
    return quad(integrand, -1, 1)[0] * 0.5 * np.linalg.norm(d)


@pytest.mark.parametrize("family", ["bdm", "rt"])
def test_kronecker_duality(family):
    space = FamilyOrder(family, 1)
    coef = reference_basis(space)
    nm = space.moments_per_edge
    D = np.array([[quad_moment(coef[f], i, j) for f in range(len(coef))]
                  for i in range(3) for j in range(nm)])
    assert np.allclose(D, np.eye(len(coef)), atol=1e-12)


def test_order_guard():
    with pytest.raises(OrderNotImplemented):
        FamilyOrder("bdm", 2)
    with pytest.raises(ValueError):
        FamilyOrder("nedelec", 1)


def test_rt_divergence_constant():
    pts = np.array([[0.1, 0.2], [0.7, 0.1], [0.3, 0.6]])
    _, div, _ = shape_values(FamilyOrder("rt", 1), pts)
    assert np.allclose(div, div[0])


def test_piola_identity_and_scaling():
    v = np.array([0.3, -1.2])
    assert np.allclose(piola_map(np.eye(2), v), v)
    s = 2.5
    val, div = piola_map(s * np.eye(2), v, div=np.array(1.7))
    assert np.allclose(val, v / s)  # J v / det J = s v / s^2
    assert np.isclose(div, 1.7 / s ** 2)


def test_constant_field_in_span(bdm):
    m = refine(build_rect_mesh(2, 2), [1])
    U = VelocityField(DofMap(m, bdm), interpolate_Rh(lambda x: np.stack([np.ones(x.shape[:-1]), 0 * x[..., 0]], -1), m, bdm))
    rng = np.random.default_rng(0)
    elems = np.arange(m.n_triangles)
    lam = rng.dirichlet([1, 1, 1], size=(m.n_triangles, 5))
    pts = np.einsum("nqk,nkd->nqd", lam, m.vertices[m.triangles])
    val, grad = U.evaluate(elems, pts)
    assert np.abs(val - [1, 0]).max() < 1e-12
    assert np.abs(grad).max() < 1e-12


def test_linear_field_divergence(bdm):
    m = build_rect_mesh(3, 3)
    U = VelocityField(DofMap(m, bdm), interpolate_Rh(lambda x: x.copy(), m, bdm))
    pts, _ = element_points(m, np.arange(m.n_triangles), 2)
    assert np.allclose(U.divergence(np.arange(m.n_triangles), pts), 2.0)


@pytest.mark.parametrize("family", ["bdm", "rt"])
def test_divergence_commutes_weakly(family):
    space = FamilyOrder(family, 1)
    m = refine(build_rect_mesh(3, 3), [0, 4])
    U = VelocityField(DofMap(m, space),
                      interpolate_Rh(lambda x: np.stack([np.sin(x[..., 1]) + x[..., 0] ** 3, 0 * x[..., 0]], -1),
                                     m, space, npoints=8))
    elems = np.arange(m.n_triangles)
    pts, w = element_points(m, elems, 8)
    # (div(u - R_h u), 1)_K = 0 for each element; div u = 3 x^2
    lhs = np.einsum("nq,nq->n", U.divergence(elems, pts), w)
    rhs = np.einsum("nq,nq->n", 3 * pts[..., 0] ** 2, w)
    assert np.abs(lhs - rhs).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.2, 3))
def test_normal_flux_continuity(dx, dy, s):
    # two triangles sharing the edge (0,0)-(s,s): random apex positions keep them valid
    verts = np.array([[0, 0], [s, s], [s + 0.5 + abs(dx), -0.3 - abs(dy)], [-0.4 - abs(dy), s + 0.2 + abs(dx)]])
    tri = [[0, 2, 1], [0, 1, 3]]
    m = Mesh(verts, tri)
    space = FamilyOrder("bdm", 1)
    dm = DofMap(m, space)
    rng = np.random.default_rng(int(1e6 * (dx + 2)))
    U = VelocityField(dm, rng.standard_normal(dm.n_dofs))
    e = m.interior_edges
    pts, _, _ = edge_points(m, e, 4)
    vl, _ = U.evaluate(m.edge_elements[e, 0], pts)
    vr, _ = U.evaluate(m.edge_elements[e, 1], pts)
    n = m.normals[e]
    assert np.allclose(np.einsum("eqc,ec->eq", vl, n), np.einsum("eqc,ec->eq", vr, n), atol=1e-12)


def test_local_basis_matches_reference_on_unit_triangle(bdm):
    m = Mesh(REF, [[0, 1, 2]])
    pts = np.array([[[0.2, 0.3], [0.5, 0.1]]])
    val, div, grad, _ = local_basis(m, bdm, [0], pts)
    rv, rd, rg = shape_values(bdm, pts[0])
    assert np.allclose(val[0], rv) and np.allclose(div[0], rd) and np.allclose(grad[0], rg)


def test_dofmap_counts(bdm, rt):
    m = build_rect_mesh(3, 2)
    assert DofMap(m, bdm).n_dofs == 2 * m.n_edges
    assert DofMap(m, rt).n_dofs == m.n_edges
    broken = DofMap(m, bdm, broken=m.interior_edges)
    assert broken.n_dofs == 2 * (m.n_edges + len(m.interior_edges))
    # each element owns private dofs in the broken space
    flat = broken.cell_dofs.ravel()
    assert len(np.unique(flat)) == len(flat)


def test_project_Ph_examples():
    tri = Mesh(REF, [[0, 1, 2]])
    assert np.isclose(project_Ph(lambda x: x[..., 0], tri).coeffs[0, 0], 1 / 3)
    m = build_rect_mesh(2, 2)
    assert np.allclose(project_Ph(lambda x: np.full(x.shape[:-1], 2.5), m).coeffs, 2.5)
    g = project_Ph(lambda x: np.exp(x[..., 0]) * np.sin(3 * x[..., 1]), m)
    pts, w = element_points(m, np.arange(m.n_triangles), 10)
    res = np.exp(pts[..., 0]) * np.sin(3 * pts[..., 1]) - g.coeffs[:, :1]
    assert np.abs(np.einsum("nq,nq->n", res, w)).max() < 1e-13

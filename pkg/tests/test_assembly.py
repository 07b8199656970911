import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import dblquad

from brinkman_hdiv.assembly import (NitscheConfig, assemble_ah, assemble_b, assemble_load,
                                    assemble_pressure_bc, assemble_system, eliminate, normal_bc_values)
from brinkman_hdiv.mesh import build_rect_mesh, refine
from brinkman_hdiv.problem import BrinkmanProblem, analytic_case, channel_case, channel_tagger
from brinkman_hdiv.spaces import DofMap, VelocityField, interpolate_Rh


def element_integral(mesh, k, func):
    """Integral over triangle ``k`` by adaptive scalar quadrature."""
    a, b, c = mesh.vertices[mesh.triangles[k]]
    J = np.column_stack([b - a, c - a])

    def integrand(s, r):
        x = a + J @ np.array([r, s])
        return func(x)
    return dblquad(integrand, 0, 1, 0, lambda r: 1 - r, epsabs=1e-13)[0] * abs(np.linalg.det(J))


@pytest.mark.parametrize("family", ["bdm", "rt"])
def test_mass_matrix_against_adaptive_quadrature(family, rng):
    from brinkman_hdiv.spaces import FamilyOrder
    space = FamilyOrder(family, 1)
    m = build_rect_mesh(2, 1)
    dm = DofMap(m, space)
    M = assemble_ah(BrinkmanProblem(t=0.0, sigma2=1.0), m, space, dofmap=dm)
    v, w = rng.standard_normal((2, dm.n_dofs))
    V, W = VelocityField(dm, v), VelocityField(dm, w)

    def point(F, k, x):
        return F.evaluate(np.array([k]), x[None, None, :])[0][0, 0]
    ref = sum(element_integral(m, k, lambda x: point(V, k, x) @ point(W, k, x)) for k in range(m.n_triangles))
    assert np.isclose(v @ (M @ w), ref, rtol=1e-11)


def test_ah_symmetric_and_sigma_scaling(bdm):
    m = refine(build_rect_mesh(3, 3), [2, 7])
    s2 = np.linspace(1, 5, m.n_triangles)
    pr = BrinkmanProblem(t=0.3, sigma2=lambda x: 1 + x[..., 0])
    A = assemble_ah(pr, m, bdm, sigma2=s2)
    assert abs(A - A.T).max() < 1e-13
    A0 = assemble_ah(BrinkmanProblem(t=0.0), m, bdm, sigma2=s2)
    A1 = assemble_ah(BrinkmanProblem(t=0.0), m, bdm, sigma2=2 * s2)
    assert abs(A1 - 2 * A0).max() < 1e-13


def test_ah_on_smooth_linear_field(bdm):
    # a globally linear field has no tangential jumps: a_h(v, v) = |v|^2 + t^2 |grad v|^2
    m = build_rect_mesh(3, 2)
    dm = DofMap(m, bdm)
    v = interpolate_Rh(lambda x: np.stack([x[..., 0], -x[..., 1]], -1), m, bdm, dm)
    t = 0.7
    A = assemble_ah(BrinkmanProblem(t=t), m, bdm, dofmap=dm)
    exact = (1 / 3 + 1 / 3) + t ** 2 * 2.0
    assert np.isclose(v @ (A @ v), exact, rtol=1e-12)


def test_nitsche_config():
    with pytest.raises(ValueError):
        NitscheConfig(alpha=0)
    with pytest.warns(RuntimeWarning):
        NitscheConfig(alpha=0.5)
    pr = channel_case(0.0)
    assert NitscheConfig().nitsche_tags(pr) == ()


def test_divergence_block(bdm):
    m = refine(build_rect_mesh(2, 2), [0])
    dm = DofMap(m, bdm)
    v = interpolate_Rh(lambda x: x.copy(), m, bdm, dm)
    B, G = assemble_b(m, bdm, dm, g=lambda x: np.ones(x.shape[:-1]))
    assert np.allclose(B @ v, -2 * m.areas)
    assert np.allclose(G, m.areas)
    const = interpolate_Rh(lambda x: np.stack([np.ones(x.shape[:-1]), 2 * np.ones(x.shape[:-1])], -1), m, bdm, dm)
    assert np.abs(B @ const).max() < 1e-14


def test_load_vector(bdm):
    m = build_rect_mesh(2, 2)
    dm = DofMap(m, bdm)
    pr = BrinkmanProblem(t=0.0, f=lambda x: np.stack([np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])], -1))
    F = assemble_load(pr, m, bdm, dm)
    v = interpolate_Rh(lambda x: np.stack([x[..., 1], 0 * x[..., 0]], -1), m, bdm, dm)
    assert np.isclose(F @ v, 0.5)


def test_pressure_bc_load(bdm):
    m = build_rect_mesh(2, 2).with_tags(channel_tagger)
    dm = DofMap(m, bdm)
    F = assemble_pressure_bc(channel_case(0.1), m, bdm, dofmap=dm)
    # v = (1, 0): -<p_D, v.n> = -(0.5 * (-1) + (-0.5) * 1) = 1
    v = interpolate_Rh(lambda x: np.stack([np.ones(x.shape[:-1]), 0 * x[..., 0]], -1), m, bdm, dm)
    assert np.isclose(F @ v, 1.0)


def test_normal_bc_moments(bdm):
    m = build_rect_mesh(2, 2).with_tags(lambda x: "dirichlet")
    pr = analytic_case(3.1, 1.0)
    dofs, vals = normal_bc_values(pr, m, bdm)
    ref = interpolate_Rh(pr.u_D, m, bdm, npoints=8)
    assert np.allclose(ref[dofs], vals, atol=1e-12)


def test_system_structure(bdm):
    m = build_rect_mesh(3, 3)
    s = assemble_system(analytic_case(3.1, 1.0), m, bdm)
    K = s.matrix()
    assert K.shape == (s.n_u + s.n_p + 1,) * 2
    assert abs(K - K.T).max() < 1e-12
    assert s.use_mean_constraint
    assert len(s.fixed_dofs) == 2 * len(m.boundary_edges)
    # compatibility of the flux data with g = 0 on the closed boundary
    e = m.boundary_edges
    assert abs(s.fixed_values.reshape(len(e), 2)[:, 0].sum()) < 1e-13
    ch = assemble_system(channel_case(0.1), m.with_tags(channel_tagger), bdm)
    assert not ch.use_mean_constraint


def test_eliminate():
    K = sp.csr_matrix(np.array([[4.0, 1, 0], [1, 3, 1], [0, 1, 2]]))
    b = np.array([1.0, 2, 3])
    Kf, bf, free = eliminate(K, b, np.array([1]), np.array([2.0]))
    assert free.tolist() == [0, 2]
    assert np.allclose(Kf.toarray(), [[4, 0], [0, 2]])
    assert np.allclose(bf, [1 - 2, 3 - 2])

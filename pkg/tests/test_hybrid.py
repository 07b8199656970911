import numpy as np
import pytest

from brinkman_hdiv.assembly import assemble_system, eliminate
from brinkman_hdiv.hybrid import (HybridError, _condense_subdomains, build_hybrid_system, condense, full_skeleton,
                                  make_dd_skeleton, skeleton_condition, skeleton_inertia, solve_hybrid,
                                  solve_skeleton, to_conforming)
from brinkman_hdiv.mesh import build_rect_mesh, refine
from brinkman_hdiv.problem import analytic_case, channel_case, channel_tagger
from brinkman_hdiv.solve import SolverError, solve_saddle
from brinkman_hdiv.spaces import DofMap, FamilyOrder, edge_points


def dense_schur(hs):
    """Skeleton matrix and load by eliminating (u, p) from the full dense system."""
    K = hs.full_matrix()
    b = hs.full_rhs()
    Kf, bf, free = eliminate(K, b, hs.fixed_dofs, hs.fixed_values)
    Kf = Kf.toarray()
    ni = len(free) - hs.n_skeleton
    Kii, Kis, Kss = Kf[:ni, :ni], Kf[:ni, ni:], Kf[ni:, ni:]
    X = np.linalg.solve(Kii, np.column_stack([Kis, bf[:ni]]))
    return Kss - Kis.T @ X[:, :-1], bf[ni:] - Kis.T @ X[:, -1]


@pytest.fixture
def mesh():
    return refine(build_rect_mesh(4, 4), [2])


def test_dd_partition():
    m = build_rect_mesh(4, 4)
    sk, sub = make_dd_skeleton(m, 4)
    assert len(np.unique(sub)) == 4 and len(sk) == 8
    assert np.all(m.edge_elements[sk, 1] >= 0)
    ee = m.edge_elements[sk]
    assert np.all(sub[ee[:, 0]] != sub[ee[:, 1]])
    with pytest.raises(ValueError):
        make_dd_skeleton(build_rect_mesh(2, 2), 64)
    sk, sub = full_skeleton(m)
    assert len(sk) == len(m.interior_edges) and len(np.unique(sub)) == m.n_triangles


@pytest.mark.parametrize("t", [0.0, 0.5])
@pytest.mark.parametrize("nsub", [None, 4])
def test_condensation_matches_dense_schur(mesh, t, nsub):
    sk, sub = full_skeleton(mesh) if nsub is None else make_dd_skeleton(mesh, nsub)
    hs = build_hybrid_system(analytic_case(3.1, t), mesh, FamilyOrder("bdm", 1), skeleton=sk, subdomain=sub)
    S_ref, r_ref = dense_schur(hs)
    cond = condense(hs)
    scale = np.abs(S_ref).max()
    assert np.abs(cond.S.toarray() - S_ref).max() < 1e-10 * scale
    assert np.abs(cond.r - r_ref).max() < 1e-10 * max(np.abs(r_ref).max(), 1.0)


def test_element_and_subdomain_paths_agree(mesh):
    hs = build_hybrid_system(analytic_case(3.1, 1.0), mesh, FamilyOrder("bdm", 1))
    a, b = condense(hs), _condense_subdomains(hs)
    assert np.abs((a.S - b.S).toarray()).max() < 1e-10 * abs(a.S).max()
    assert np.allclose(a.r, b.r, atol=1e-10)


@pytest.mark.parametrize("family", ["bdm", "rt"])
def test_t0_hybrid_equals_conforming(mesh, family):
    space = FamilyOrder(family, 1)
    pr = analytic_case(3.1, 0.0)
    system = assemble_system(pr, mesh, space)
    u, p, _, _ = solve_saddle(system)
    for sk, sub in (full_skeleton(mesh), make_dd_skeleton(mesh, 4)):
        sol = solve_hybrid(pr, mesh, space, skeleton=sk, subdomain=sub)
        assert np.abs(to_conforming(sol, system.dofmap) - u).max() < 1e-9
        assert np.abs(sol.p - p).max() < 1e-9


@pytest.mark.parametrize("nsub", [None, 4])
def test_normal_continuity_on_skeleton(mesh, nsub):
    sk, sub = full_skeleton(mesh) if nsub is None else make_dd_skeleton(mesh, nsub)
    sol = solve_hybrid(analytic_case(3.1, 1.0), mesh, FamilyOrder("bdm", 1), skeleton=sk, subdomain=sub)
    pts, _, _ = edge_points(mesh, sk, 4)
    vl, _ = sol.u.evaluate(mesh.edge_elements[sk, 0], pts)
    vr, _ = sol.u.evaluate(mesh.edge_elements[sk, 1], pts)
    n = mesh.normals[sk]
    assert np.abs(np.einsum("eqc,ec->eq", vl - vr, n)).max() < 1e-9
    assert abs(sol.p @ mesh.areas) < 1e-12


def test_lambda_only_matches_conforming_for_t_positive(mesh):
    pr = channel_case(0.1)
    m = mesh.with_tags(channel_tagger)
    system = assemble_system(pr, m, FamilyOrder("bdm", 1))
    u, p, _, _ = solve_saddle(system)
    sol = solve_hybrid(pr, m, FamilyOrder("bdm", 1), tangential="nitsche")
    assert np.abs(to_conforming(sol, system.dofmap) - u).max() < 1e-9
    with pytest.raises(HybridError):
        condense(sol.system)


def test_skeleton_symmetric_and_indefinite(mesh):
    hs = build_hybrid_system(analytic_case(3.1, 1.0), mesh, FamilyOrder("bdm", 1))
    S = condense(hs).S
    assert abs(S - S.T).max() <= 1e-13 * abs(S).max()
    pos, neg, zero = skeleton_inertia(S)
    assert pos > 0 and neg > 0 and zero == 1


def test_t0_lambda_block_semidefinite(mesh):
    hs = build_hybrid_system(analytic_case(3.1, 0.0), mesh, FamilyOrder("bdm", 1))
    S = condense(hs).S
    nl = hs.n_lambda
    # m decouples at t = 0 and carries only its positive mass block
    assert abs(S[:nl, nl:]).max() == 0
    pos, neg, zero = skeleton_inertia(S[:nl, :nl])
    assert pos == 0 and zero == 1
    assert skeleton_inertia(S[nl:, nl:])[0] == hs.n_m
    null = hs.skeleton_null()
    assert np.abs(S @ null).max() < 1e-10 * abs(S).max()
    assert skeleton_condition(S, null).kappa > 1


def test_skeleton_solvers_agree(mesh):
    for t in (0.0, 1.0):
        hs = build_hybrid_system(analytic_case(3.1, t), mesh, FamilyOrder("bdm", 1))
        c = condense(hs)
        null = hs.skeleton_null()
        x1, _ = solve_skeleton(c.S, c.r, null)
        x2, _ = solve_skeleton(c.S, c.r, null, method="minres", tol=1e-10)
        w = null / np.linalg.norm(null)
        d = (x1 - x2) - w * (w @ (x1 - x2))
        assert np.abs(d).max() < 1e-6 * np.abs(x1).max()
        if t == 0:
            x3, rep = solve_skeleton(c.S, c.r, null, method="cg", tol=1e-12, n_lambda=hs.n_lambda)
            d = (x1 - x3) - w * (w @ (x1 - x3))
            assert np.abs(d).max() < 1e-6 * np.abs(x1).max()
        else:
            with pytest.raises(SolverError):
                solve_skeleton(c.S, c.r, null, method="cg", n_lambda=hs.n_lambda)
    with pytest.raises(ValueError):
        solve_skeleton(c.S, c.r, null, method="gmres")


def test_m_evaluator(mesh):
    sol = solve_hybrid(channel_case(0.2), mesh.with_tags(channel_tagger), FamilyOrder("bdm", 1))
    ev = sol.m_evaluator()
    sk = sol.system.skeleton
    pts, _, _ = edge_points(mesh, sk, 3)
    assert ev(sk, pts).shape == (len(sk), 3)
    boundary = mesh.boundary_edges[:1]
    with pytest.raises(ValueError):
        ev(boundary, edge_points(mesh, boundary, 3)[0])


def test_hybrid_input_checks(mesh, bdm):
    pr = analytic_case(3.1, 1.0)
    with pytest.raises(HybridError):
        build_hybrid_system(pr, mesh, bdm, skeleton=mesh.boundary_edges[:2], subdomain=np.zeros(mesh.n_triangles))
    with pytest.raises(HybridError):
        build_hybrid_system(pr, mesh, bdm, skeleton=[], subdomain=np.zeros(mesh.n_triangles))
    with pytest.raises(ValueError):
        build_hybrid_system(pr, mesh, bdm, tangential="none")
    with pytest.raises(ValueError):
        build_hybrid_system(pr, mesh, bdm, m_degree=3)

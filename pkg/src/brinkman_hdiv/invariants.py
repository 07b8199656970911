"""Algebraic invariant suite behind the ``check`` subcommand.

Each check returns a :class:`CheckResult`; none of them raises on a failed
property, so a report always covers the whole suite.
"""
from dataclasses import dataclass, replace
import time

import numpy as np

from .adapt import solve_level
from .assembly import NitscheConfig, assemble_ah, assemble_nitsche_boundary, assemble_system
from .estimate import elementize_indicators, velocity_norm
from .hybrid import (build_hybrid_system, condense, full_skeleton, make_dd_skeleton, skeleton_inertia,
                     solve_hybrid)
from .mesh import build_rect_mesh, refine
from .problem import analytic_case, channel_case, channel_tagger
from .solve import solve_saddle
from .spaces import DofMap, FamilyOrder, VelocityField, element_points, interpolate_Rh, project_Ph


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tol {self.tol:.1e}) {self.detail}".rstrip()


def _graded_mesh(n=4, seed_elems=(0, 5, 11)):
    """A structured mesh with some local bisections (non-uniform, still conforming)."""
    mesh = build_rect_mesh(n, n)
    mesh = refine(mesh, list(seed_elems))
    return refine(mesh, np.arange(0, mesh.n_triangles, 3))


def _smooth_field(x):
    return np.stack([np.sin(2 * x[..., 0]) * np.exp(x[..., 1]), np.cos(3 * x[..., 0] * x[..., 1])], axis=-1)


def _smooth_div(x):
    return (2 * np.cos(2 * x[..., 0]) * np.exp(x[..., 1])
            - 3 * x[..., 0] * np.sin(3 * x[..., 0] * x[..., 1]))


def _div_residual(U, mesh, target):
    """``||div U - target||_0`` with ``target`` a per-element constant."""
    elems = np.arange(mesh.n_triangles)
    pts, w = element_points(mesh, elems, 4)
    d = U.divergence(elems, pts) - target[:, None]
    return float(np.sqrt(np.einsum("nq,nq->", d ** 2, w)))


def check_commuting_diagram(family="bdm", tol=1e-10):
    mesh = _graded_mesh()
    space = FamilyOrder(family, 1)
    dm = DofMap(mesh, space)
    U = VelocityField(dm, interpolate_Rh(_smooth_field, mesh, space, dm, npoints=8))
    Pg = project_Ph(_smooth_div, mesh).coeffs[:, 0]
    err = _div_residual(U, mesh, Pg)
    return CheckResult(f"commuting_diagram[{family}]", err <= tol, err, tol)


def _with_source(problem):
    return replace(problem, g=lambda x: np.sin(np.pi * x[..., 0]) * x[..., 1], exact=None)


def check_mass_conservation(tol=1e-10):
    """``||div u_h - P_h g||_0`` for conforming, full hybrid and DD solves with ``g != 0``."""
    mesh = _graded_mesh()
    worst = 0.0
    space = FamilyOrder("bdm", 1)
    for t in (0.0, 1.0):
        problem = _with_source(analytic_case(3.1, t))
        Pg = project_Ph(problem.g, mesh).coeffs[:, 0]
        system = assemble_system(problem, mesh, space)
        u, *_ = solve_saddle(system)
        worst = max(worst, _div_residual(VelocityField(system.dofmap, u), mesh, Pg))
        for sk, sub in (full_skeleton(mesh), make_dd_skeleton(mesh, 4)):
            sol = solve_hybrid(problem, mesh, space, skeleton=sk, subdomain=sub)
            worst = max(worst, _div_residual(sol.u, mesh, Pg))
    return CheckResult("mass_conservation", worst <= tol, worst, tol, "conforming, hybrid, dd4; t in {0, 1}")


def _skeleton_matrices():
    mesh = build_rect_mesh(4, 4)
    space = FamilyOrder("bdm", 1)
    out = []
    for t in (0.0, 1.0):
        for sk, sub in (full_skeleton(mesh), make_dd_skeleton(mesh, 4)):
            hs = build_hybrid_system(analytic_case(3.1, t), mesh, space, NitscheConfig(), sk, sub)
            out.append((t, condense(hs).S, hs.skeleton_null()))
    return out


def check_skeleton_symmetry(tol=1e-12):
    worst = 0.0
    for _, S, _ in _skeleton_matrices():
        worst = max(worst, abs(S - S.T).max() / abs(S).max())
    return CheckResult("skeleton_symmetry", worst <= tol, worst, tol, "relative to max |S_ij|")


def check_skeleton_spd(samples=100, seed=0):
    """Sign of ``x^T S x`` for random ``x`` orthogonal to the null vector."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    negatives = 0
    for _, S, null in _skeleton_matrices():
        negatives = max(negatives, skeleton_inertia(S)[1])
        for _ in range(samples):
            x = rng.standard_normal(S.shape[0])
            if null is not None:
                x -= null * (null @ x) / (null @ null)
            q = x @ (S @ x) / (x @ x)
            worst = min(worst, q)
    return CheckResult("skeleton_spd", worst > 0, worst, 0.0,
                       f"min Rayleigh quotient over samples; up to {negatives} negative eigenvalues")


def check_coercivity(ts=(0.0, 1e-3, 1.0, 10.0), alpha=4.0, samples=100, bound=0.1, seed=1):
    """``a_h(v, v) >= bound * ||v||^2`` on random discrete velocities."""
    rng = np.random.default_rng(seed)
    mesh = _graded_mesh()
    space = FamilyOrder("bdm", 1)
    config = NitscheConfig(alpha=alpha)
    per_t = []
    for t in ts:
        worst = np.inf
        problem = channel_case(t)
        tagged = mesh.with_tags(channel_tagger)
        dm = DofMap(tagged, space)
        sigma2 = problem.sigma2_on(tagged)
        A = assemble_ah(problem, tagged, space, config, dofmap=dm, sigma2=sigma2)
        Ab, _ = assemble_nitsche_boundary(problem, tagged, space, config, dofmap=dm)
        A = (A + Ab).tocsr()
        tags = config.nitsche_tags(problem)
        for _ in range(samples):
            v = rng.standard_normal(dm.n_dofs)
            nv = velocity_norm(VelocityField(dm, v), tagged, sigma2, t, tags)
            worst = min(worst, (v @ (A @ v)) / nv ** 2)
        per_t.append(worst)
    detail = "min a_h(v,v)/||v||^2 per t: " + ", ".join(f"{t:g}:{c:.3f}" for t, c in zip(ts, per_t))
    return CheckResult("coercivity", min(per_t) >= bound, min(per_t), bound, detail)


def check_mean_preservation(tol=1e-12):
    worst = 0.0
    mesh = _graded_mesh()
    for family in ("bdm", "rt"):
        for t in (1e-6, 1.0, 1e3):
            _, _, ps, _, _, _ = solve_level(analytic_case(3.1, t), mesh, FamilyOrder(family, 1))
            worst = max(worst, ps.mean_defect())
    return CheckResult("mean_preservation", worst <= tol, worst, tol, "relative to max |p_h|")


def check_eta_pythagoras(tol=1e-12):
    worst = 0.0
    mesh = _graded_mesh()
    for t in (0.0, 1e-2, 1.0):
        problem = channel_case(t)
        tagged = mesh.with_tags(channel_tagger)
        *_, report, _, _ = solve_level(problem, tagged, FamilyOrder("bdm", 1))
        parts = np.sum(report.eta_K ** 2) + np.sum(report.eta_E ** 2)
        split = np.sum(elementize_indicators(report, tagged))
        if report.eta > 0:
            worst = max(worst, abs(report.eta ** 2 - parts) / report.eta ** 2,
                        abs(split - parts) / report.eta ** 2)
    return CheckResult("eta_pythagoras", worst <= tol, worst, tol, "eta^2 = sum parts = sum elementized")


def check_hybrid_oracle(tol=1e-8):
    """Normal-only hybridisation reproduces the conforming solution."""
    mesh = _graded_mesh()
    space = FamilyOrder("bdm", 1)
    worst = 0.0
    for t in (0.0, 1.0):
        problem = analytic_case(3.1, t)
        system = assemble_system(problem, mesh, space)
        u, p, _, _ = solve_saddle(system)
        sk, sub = full_skeleton(mesh)
        sol = solve_hybrid(problem, mesh, space, skeleton=sk, subdomain=sub, tangential="nitsche")
        uh = sol.u.coeffs[sol.system.dofmap.edge_dofs.ravel()]
        worst = max(worst, np.max(np.abs(uh - u[system.dofmap.edge_dofs.ravel()])), np.max(np.abs(sol.p - p)))
    return CheckResult("hybrid_oracle", worst <= tol, worst, tol, "lambda-only vs conforming coefficients")


CHECKS = (check_commuting_diagram, lambda: check_commuting_diagram("rt"), check_mass_conservation,
          check_skeleton_symmetry, check_skeleton_spd, check_coercivity, check_mean_preservation,
          check_eta_pythagoras, check_hybrid_oracle)


def run_checks(emit=None):
    """Run every check; ``emit`` receives each result line as it completes."""
    results = []
    t0 = time.perf_counter()
    for check in CHECKS:
        res = check()
        results.append(res)
        if emit is not None:
            emit(res.line())
    return results, time.perf_counter() - t0

"""Elementwise pressure postprocessing.

On each element the higher-degree pressure ``p*`` solves

    (p*, 1)_K = (p_h, 1)_K,
    (grad p*, grad q)_K = (t^2 lap u_h - sigma^2 u_h + f, grad q)_K

for all non-constant monomials ``q`` of degree ``k + 1`` (BDM) or ``k`` (RT).
"""
import numpy as np

from .spaces import ScalarField, VelocityField, element_points, monomial_exponents

DATA_QDEG = 10


class PostprocessingError(RuntimeError):
    pass


class PostprocessedPressure(ScalarField):
    """Discontinuous pressure of the augmented degree, linked to its ``p_h``."""

    def __init__(self, mesh, degree, coeffs, p_h):
        super().__init__(mesh, degree, coeffs)
        self.p_h = np.asarray(p_h, dtype=float)

    def element_means(self):
        elems = np.arange(self.mesh.n_triangles)
        pts, w = element_points(self.mesh, elems, 2 * self.degree)
        val, _ = self.evaluate(elems, pts)
        return np.einsum("nq,nq->n", val, w) / self.mesh.areas

    def mean_defect(self, relative=True):
        """Largest elementwise violation of ``P_h p* = p_h``.

        Relative to ``max |p_h|`` by default (absolute when ``p_h = 0``).
        """
        defect = float(np.max(np.abs(self.element_means() - self.p_h)))
        scale = float(np.max(np.abs(self.p_h))) if relative else 0.0
        return defect / scale if scale > 0 else defect


def piecewise_constant(mesh, p_h):
    """Wrap raw P0 coefficients as a :class:`ScalarField` (for ablations)."""
    return ScalarField(mesh, 0, np.asarray(p_h, dtype=float)[:, None])


def postprocess_pressure(u, p_h, problem, mesh, space, sigma2=None):
    """Compute ``p*`` from the discrete velocity ``u`` and pressure ``p_h``.

    ``u`` is a :class:`VelocityField` (conforming or broken dof map).
    """
    if not isinstance(u, VelocityField):
        raise TypeError("u must be a VelocityField")
    if space.pressure_degree != 0:
        raise NotImplementedError("only P0 base pressures are supported")
    p_h = np.asarray(p_h, dtype=float)
    nt = mesh.n_triangles
    if p_h.shape != (nt,):
        raise ValueError("p_h must hold one value per element")
    sigma2 = problem.sigma2_on(mesh) if sigma2 is None else sigma2
    degree = space.postprocessed_degree
    nm = len(monomial_exponents(degree))
    elems = np.arange(nt)
    pts, w = element_points(mesh, elems, DATA_QDEG)
    probe = ScalarField(mesh, degree, np.zeros((nt, nm)))
    phi, dphi = probe.basis(elems, pts)

    val, _ = u.evaluate(elems, pts)
    rhs_field = (problem.t ** 2) * u.laplacian(elems, pts) - sigma2[:, None, None] * val
    rhs_field = rhs_field + np.asarray(problem.f(pts), dtype=float)

    M = np.empty((nt, nm, nm))
    b = np.empty((nt, nm))
    M[:, 0, :] = np.einsum("nqj,nq->nj", phi, w)
    b[:, 0] = p_h * mesh.areas
    M[:, 1:, :] = np.einsum("nqid,nqjd,nq->nij", dphi[:, :, 1:], dphi, w)
    b[:, 1:] = np.einsum("nqid,nqd,nq->ni", dphi[:, :, 1:], rhs_field, w)
    try:
        coeffs = np.linalg.solve(M, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise PostprocessingError(f"singular local postprocessing system: {exc}") from exc
    if not np.all(np.isfinite(coeffs)):
        bad = np.flatnonzero(~np.all(np.isfinite(coeffs), axis=1))
        raise PostprocessingError(f"non-finite postprocessed pressure on elements {bad[:5].tolist()}")
    return PostprocessedPressure(mesh, degree, coeffs, p_h)

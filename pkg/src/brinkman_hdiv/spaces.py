"""H(div) velocity elements, discontinuous pressure spaces and their interpolants.

Velocity shape functions are built on the reference triangle as the dual
basis of edge normal moments and mapped with the contravariant Piola
transform.  Edge moments are taken against ``{1, xi}`` where ``xi`` runs
from -1 to 1 along the edge.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quadrature import edge_rule, triangle_rule

BDM = "bdm"
RT = "rt"

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class OrderNotImplemented(NotImplementedError):
    pass


@dataclass(frozen=True)
class FamilyOrder:
    family: str = BDM
    k: int = 1

    def __post_init__(self):
        if self.family not in (BDM, RT):
            raise ValueError(f"unknown element family {self.family!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("order k must be a positive integer")
        if self.k != 1:
            raise OrderNotImplemented(f"order not implemented: k={self.k}")

    @property
    def moments_per_edge(self):
        return self.k + 1 if self.family == BDM else self.k

    @property
    def pressure_degree(self):
        return self.k - 1

    @property
    def postprocessed_degree(self):
        return self.k + 1 if self.family == BDM else self.k

    @property
    def n_local(self):
        return 3 * self.moments_per_edge


# ---------------------------------------------------------------- monomials
def monomial_exponents(degree):
    return [(i - j, j) for i in range(degree + 1) for j in range(i + 1)]


def eval_monomials(points, degree):
    """Values, gradients and Hessians of ``x^a y^b`` (a + b <= degree).

    Returns arrays of shape (..., nm), (..., nm, 2) and (..., nm, 2, 2).
    """
    x = points[..., 0]
    y = points[..., 1]
    exps = monomial_exponents(degree)

    def pw(z, n):
        return z ** n if n >= 0 else np.zeros_like(z)

    val = np.stack([pw(x, a) * pw(y, b) for a, b in exps], axis=-1)
    gx = np.stack([a * pw(x, a - 1) * pw(y, b) for a, b in exps], axis=-1)
    gy = np.stack([b * pw(x, a) * pw(y, b - 1) for a, b in exps], axis=-1)
    hxx = np.stack([a * (a - 1) * pw(x, a - 2) * pw(y, b) for a, b in exps], axis=-1)
    hxy = np.stack([a * b * pw(x, a - 1) * pw(y, b - 1) for a, b in exps], axis=-1)
    hyy = np.stack([b * (b - 1) * pw(x, a) * pw(y, b - 2) for a, b in exps], axis=-1)
    grad = np.stack([gx, gy], axis=-1)
    hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
    return val, grad, hess


# ------------------------------------------------------------ reference basis
def reference_edges():
    """Start point, end point and outward unit normal of reference edge ``i``."""
    out = []
    for i in range(3):
        a = REF_VERTICES[(i + 1) % 3]
        b = REF_VERTICES[(i + 2) % 3]
        d = b - a
        n = np.array([d[1], -d[0]]) / np.linalg.norm(d)
        out.append((a, b, n))
    return out


def _raw_space(space):
    """Coefficient tensors (nfun, 2, nmono) spanning the local polynomial space."""
    if space.family == BDM:
        raw = np.zeros((6, 2, 3))
        for c in range(2):
            for m in range(3):
                raw[3 * c + m, c, m] = 1.0
        return raw
    raw = np.zeros((3, 2, 3))
    raw[0, 0, 0] = 1.0
    raw[1, 1, 0] = 1.0
    raw[2, 0, 1] = 1.0  # x * (x, y): first component x
    raw[2, 1, 2] = 1.0  # second component y
    return raw


def reference_dofs(coef, space, npoints=6):
    """Apply the edge normal-moment functionals to functions given by ``coef``."""
    xi, w = edge_rule(npoints)
    rows = []
    for a, b, n in reference_edges():
        length = np.linalg.norm(b - a)
        pts = 0.5 * (1 - xi)[:, None] * a + 0.5 * (1 + xi)[:, None] * b
        mono, _, _ = eval_monomials(pts, 1)
        vals = np.einsum("fcm,qm->fqc", coef, mono)
        flux = vals @ n
        for j in range(space.moments_per_edge):
            rows.append((flux * (xi ** j)) @ w * length)
    return np.array(rows)


@lru_cache(maxsize=None)
def reference_basis(space):
    """Dual basis coefficients of shape (n_local, 2, nmono) on the reference triangle."""
    raw = _raw_space(space)
    D = reference_dofs(raw, space)  # D[i, j] = dof_i(raw_j)
    C = np.linalg.solve(D, np.eye(len(raw)))  # columns: combos of raw
    coef = np.einsum("jcm,ji->icm", raw, C)
    coef.setflags(write=False)
    return coef


def shape_values(space, ref_points):
    """Reference shape functions at ``ref_points`` (nq, 2).

    Returns ``(values (nq, nb, 2), divergence (nq, nb), gradient (nq, nb, 2, 2))``
    with ``gradient[..., i, j] = d phi_i / d x_j``.
    """
    ref_points = np.atleast_2d(ref_points)
    if np.any(ref_points < -1e-12) or np.any(ref_points.sum(axis=1) > 1 + 1e-12):
        raise ValueError("reference point outside the reference triangle")
    coef = reference_basis(space)
    mono, mgrad, _ = eval_monomials(ref_points, 1)
    val = np.einsum("bcm,qm->qbc", coef, mono)
    grad = np.einsum("bcm,qmd->qbcd", coef, mgrad)
    div = grad[..., 0, 0] + grad[..., 1, 1]
    return val, div, grad


def piola_map(jacobian, value, div=None, grad=None):
    """Contravariant Piola transform of reference values.

    ``jacobian`` has shape (..., 2, 2); ``value`` (..., 2) is mapped to
    ``J v / det J``, divergences scale by ``1/det J`` and gradients map to
    ``J G J^{-1} / det J``.
    """
    J = np.asarray(jacobian, dtype=float)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(np.abs(det) < 1e-300):
        raise ValueError("degenerate Jacobian")
    v = np.einsum("...ij,...j->...i", J, value) / det[..., None]
    out = [v]
    if div is not None:
        out.append(div / det)
    if grad is not None:
        Jinv = np.linalg.inv(J)
        out.append(np.einsum("...ij,...jk,...kl->...il", J, grad, Jinv) / det[..., None, None])
    return tuple(out) if len(out) > 1 else v


def local_basis(mesh, space, elems, points):
    """Physical local shape functions of ``elems`` at physical ``points``.

    ``points`` has shape (n, nq, 2) with ``n = len(elems)``.  Returns
    values (n, nq, nb, 2), divergences (n, nq, nb), gradients (n, nq, nb, 2, 2)
    and Laplacians (n, nq, nb, 2) of the *local* (element-oriented) basis.
    """
    elems = np.asarray(elems)
    coef = reference_basis(space)  # (nb, 2, 3): affine reference functions
    J = mesh.jacobians[elems]
    det = mesh.detJ[elems]
    Jinv = np.linalg.inv(J)
    v0 = mesh.vertices[mesh.triangles[elems, 0]]
    xh = np.einsum("nij,nqj->nqi", Jinv, points - v0[:, None, :])
    # Piola-mapped coefficients P[n, b, i, m] of the affine reference monomials
    P = np.einsum("nij,bjm->nbim", J, coef) / det[:, None, None, None]
    val = P[..., 0][:, None] + np.einsum("nbid,nqd->nqbi", P[..., 1:], xh)
    G = np.einsum("nbid,ndl->nbil", P[..., 1:], Jinv)
    nq = points.shape[1]
    grad = np.broadcast_to(G[:, None], (len(elems), nq) + G.shape[1:])
    div = grad[..., 0, 0] + grad[..., 1, 1]
    lap = np.zeros(val.shape)  # affine shape functions
    return val, div, grad, lap


# --------------------------------------------------------------------- dofs
class DofMap:
    """Global numbering of velocity degrees of freedom.

    Edges listed in ``broken`` get a private copy of their dofs for the right
    element, which removes normal continuity across them.
    """

    def __init__(self, mesh, space, broken=None):
        self.mesh = mesh
        self.space = space
        nm = space.moments_per_edge
        ne, nt = mesh.n_edges, mesh.n_triangles
        self.broken = np.zeros(ne, dtype=bool)
        if broken is not None and len(broken):
            b = np.asarray(broken, dtype=np.int64)
            if np.any(mesh.edge_elements[b, 1] < 0):
                raise ValueError("boundary edges cannot be broken")
            self.broken[b] = True
        self.edge_dofs = np.arange(ne * nm).reshape(ne, nm)
        nb = int(self.broken.sum())
        self.edge_dofs_right = -np.ones((ne, nm), dtype=np.int64)
        self.edge_dofs_right[self.broken] = ne * nm + np.arange(nb * nm).reshape(nb, nm)
        self.n_dofs = (ne + nb) * nm

        te = mesh.tri_edges
        is_right = mesh.tri_edge_sign < 0
        dofs = np.where((is_right & self.broken[te])[..., None],
                        self.edge_dofs_right[te], self.edge_dofs[te])
        self.cell_dofs = dofs.reshape(nt, 3 * nm)
        signs = np.ones((nt, 3, nm), dtype=float)
        signs[..., 0] = mesh.tri_edge_sign
        self.cell_signs = signs.reshape(nt, 3 * nm)

    def boundary_dofs(self, edges):
        return self.edge_dofs[np.asarray(edges, dtype=np.int64)].ravel()


def edge_points(mesh, edges, npoints=4):
    """Physical quadrature points (n, nq, 2), weights (n, nq) and ``xi`` on edges."""
    xi, w = edge_rule(npoints)
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    pts = 0.5 * (1 - xi)[None, :, None] * a[:, None, :] + 0.5 * (1 + xi)[None, :, None] * b[:, None, :]
    weights = w[None, :] * mesh.edge_lengths[edges, None]
    return pts, weights, xi


def element_points(mesh, elems, degree=4):
    """Physical quadrature points (n, nq, 2) and weights (n, nq) on elements."""
    ref, w = triangle_rule(degree)
    v0 = mesh.vertices[mesh.triangles[elems, 0]]
    pts = v0[:, None, :] + np.einsum("nij,qj->nqi", mesh.jacobians[elems], ref)
    return pts, w[None, :] * mesh.detJ[elems, None]


def interpolate_Rh(u, mesh, space, dofmap=None, npoints=6):
    """Canonical interpolant: global edge normal moments of the vector field ``u``."""
    dofmap = dofmap or DofMap(mesh, space)
    edges = np.arange(mesh.n_edges)
    pts, w, xi = edge_points(mesh, edges, npoints)
    flux = np.einsum("eqc,ec->eq", np.asarray(u(pts), dtype=float), mesh.normals)
    coeffs = np.zeros(dofmap.n_dofs)
    for j in range(space.moments_per_edge):
        m = np.einsum("eq,eq->e", flux * xi[None, :] ** j, w)
        coeffs[dofmap.edge_dofs[:, j]] = m
        br = dofmap.broken
        coeffs[dofmap.edge_dofs_right[br, j]] = m[br]
    return coeffs


# ------------------------------------------------------- discrete functions
class VelocityField:
    """Discrete velocity: coefficients attached to a :class:`DofMap`."""

    def __init__(self, dofmap, coeffs):
        self.dofmap = dofmap
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.mesh = dofmap.mesh
        self.space = dofmap.space

    def local_coeffs(self, elems):
        dm = self.dofmap
        return self.coeffs[dm.cell_dofs[elems]] * dm.cell_signs[elems]

    def evaluate(self, elems, points):
        """Values (n, nq, 2) and gradients (n, nq, 2, 2) at physical points."""
        val, _, grad, _ = local_basis(self.mesh, self.space, elems, points)
        c = self.local_coeffs(elems)
        return (np.einsum("nqbc,nb->nqc", val, c),
                np.einsum("nqbcd,nb->nqcd", grad, c))

    def divergence(self, elems, points):
        _, div, _, _ = local_basis(self.mesh, self.space, elems, points)
        return np.einsum("nqb,nb->nq", div, self.local_coeffs(elems))

    def laplacian(self, elems, points):
        _, _, _, lap = local_basis(self.mesh, self.space, elems, points)
        return np.einsum("nqbc,nb->nqc", lap, self.local_coeffs(elems))


class ScalarField:
    """Discontinuous piecewise polynomial of degree ``degree``.

    Each element uses monomials in ``(x - c_K) / h_K``; ``coeffs`` has shape
    ``(nt, nmono)``.
    """

    def __init__(self, mesh, degree, coeffs):
        self.mesh = mesh
        self.degree = degree
        self.coeffs = np.asarray(coeffs, dtype=float).reshape(mesh.n_triangles, -1)

    def basis(self, elems, points):
        c = self.mesh.centroids[elems][:, None, :]
        h = self.mesh.diameters[elems][:, None, None]
        val, grad, _ = eval_monomials((points - c) / h, self.degree)
        return val, grad / h[..., None]

    def evaluate(self, elems, points):
        val, grad = self.basis(elems, points)
        c = self.coeffs[elems]
        return np.einsum("nqm,nm->nq", val, c), np.einsum("nqmd,nm->nqd", grad, c)


def project_Ph(g, mesh, degree=0, qdeg=10):
    """Elementwise L2 projection of the scalar function ``g`` onto P_degree."""
    elems = np.arange(mesh.n_triangles)
    pts, w = element_points(mesh, elems, qdeg)
    probe = ScalarField(mesh, degree, np.zeros((mesh.n_triangles, len(monomial_exponents(degree)))))
    phi, _ = probe.basis(elems, pts)
    G = np.einsum("nqa,nqb,nq->nab", phi, phi, w)
    rhs = np.einsum("nqa,nq,nq->na", phi, np.asarray(g(pts), dtype=float), w)
    return ScalarField(mesh, degree, np.linalg.solve(G, rhs[..., None])[..., 0])

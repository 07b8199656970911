"""Assembly of the Nitsche-stabilised H(div) saddle-point system.

    a_h(u, v) + b(v, p) = (f, v) + boundary data
    b(u, q)             = -(g, q)

with ``b(v, q) = -(div v, q)`` and ``a_h`` carrying the symmetric interior
penalty terms for the tangential jumps on interior edges.
"""
from dataclasses import dataclass, field
import logging
import warnings

import numpy as np
import scipy.sparse as sp

from .spaces import DofMap, edge_points, element_points, local_basis

log = logging.getLogger(__name__)

DATA_QDEG = 10  # quadrature degree for non-polynomial data
EDGE_POINTS = 4
DATA_EDGE_POINTS = 8


@dataclass
class NitscheConfig:
    """Interior penalty parameter and optional override of the Nitsche boundary tags."""
    alpha: float = 4.0
    boundary_tags: tuple = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("penalty alpha must be positive")
        if self.alpha <= 1:
            warnings.warn(f"alpha={self.alpha} <= 1: coercivity of a_h may fail", RuntimeWarning)

    def nitsche_tags(self, problem):
        if problem.t == 0:
            return ()
        return tuple(problem.nitsche_tags if self.boundary_tags is None else self.boundary_tags)


@dataclass
class SaddleSystem:
    """Assembled blocks, loads and boundary bookkeeping of one discrete problem."""
    A: sp.csr_matrix
    B: sp.csr_matrix
    F: np.ndarray
    G: np.ndarray
    mean_row: np.ndarray
    dofmap: DofMap
    fixed_dofs: np.ndarray
    fixed_values: np.ndarray
    sigma2: np.ndarray
    use_mean_constraint: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_p(self):
        return self.B.shape[0]

    def matrix(self):
        """Full symmetric matrix, with the mean constraint row when active."""
        blocks = [[self.A, self.B.T], [self.B, None]]
        K = sp.bmat(blocks, format="csr")
        if self.use_mean_constraint:
            m = sp.csr_matrix(np.concatenate([np.zeros(self.n_u), self.mean_row]))
            K = sp.bmat([[K, m.T], [m, None]], format="csr")
        return K

    def rhs(self):
        b = np.concatenate([self.F, -self.G])
        if self.use_mean_constraint:
            b = np.append(b, 0.0)
        return b


# ------------------------------------------------------------------ helpers
def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def _signed_basis(mesh, dofmap, elems, pts):
    val, div, grad, lap = local_basis(mesh, dofmap.space, elems, pts)
    s = dofmap.cell_signs[elems]
    return (val * s[:, None, :, None], div * s[:, None, :],
            grad * s[:, None, :, None, None], lap * s[:, None, :, None])


def _edge_traces(mesh, dofmap, edges, side, pts):
    """Signed basis traces of the ``side`` (0 left, 1 right) element on ``edges``."""
    elems = mesh.edge_elements[edges, side]
    val, _, grad, _ = _signed_basis(mesh, dofmap, elems, pts)
    return elems, val, grad


# ------------------------------------------------------------------ a_h
def element_matrices(mesh, dofmap, sigma2, t):
    """Local mass, stiffness and divergence integrals (signed global basis)."""
    elems = np.arange(mesh.n_triangles)
    pts, w = element_points(mesh, elems, 4)
    val, div, grad, _ = _signed_basis(mesh, dofmap, elems, pts)
    M = np.einsum("nqic,nqjc,nq->nij", val, val, w)
    S = np.einsum("nqicd,nqjcd,nq->nij", grad, grad, w)
    Bl = -np.einsum("nqi,nq->ni", div, w)
    return M, S, Bl


def interior_nitsche_local(mesh, dofmap, edges, alpha):
    """Local (2 nb x 2 nb) matrices of the interior tangential-jump Nitsche terms."""
    pts, w, _ = edge_points(mesh, edges, EDGE_POINTS)
    n = mesh.normals[edges]
    tau = mesh.tangents[edges]
    h = mesh.edge_lengths[edges]
    _, vL, gL = _edge_traces(mesh, dofmap, edges, 0, pts)
    _, vR, gR = _edge_traces(mesh, dofmap, edges, 1, pts)
    J = np.concatenate([np.einsum("eqbc,ec->eqb", vL, tau),
                        -np.einsum("eqbc,ec->eqb", vR, tau)], axis=2)
    D = 0.5 * np.concatenate([np.einsum("eqbcd,ed,ec->eqb", gL, n, tau),
                              np.einsum("eqbcd,ed,ec->eqb", gR, n, tau)], axis=2)
    pen = (alpha / h)[:, None, None] * np.einsum("eqi,eqj,eq->eij", J, J, w)
    cons = np.einsum("eqi,eqj,eq->eij", J, D, w)
    return pen - cons - cons.transpose(0, 2, 1)


def boundary_nitsche_local(mesh, dofmap, edges, alpha):
    pts, w, _ = edge_points(mesh, edges, EDGE_POINTS)
    n = mesh.normals[edges]
    tau = mesh.tangents[edges]
    h = mesh.edge_lengths[edges]
    _, v, g = _edge_traces(mesh, dofmap, edges, 0, pts)
    J = np.einsum("eqbc,ec->eqb", v, tau)
    D = np.einsum("eqbcd,ed,ec->eqb", g, n, tau)
    pen = (alpha / h)[:, None, None] * np.einsum("eqi,eqj,eq->eij", J, J, w)
    cons = np.einsum("eqi,eqj,eq->eij", J, D, w)
    return pen - cons - cons.transpose(0, 2, 1)


def assemble_ah(problem, mesh, space, config=None, dofmap=None, sigma2=None,
                interior_edges=None, include_boundary=False):
    """Velocity block of a_h.

    ``interior_edges`` restricts the tangential-jump terms (default: all
    interior edges).  Boundary Nitsche terms are added only when
    ``include_boundary`` is set; see :func:`assemble_nitsche_boundary`.
    """
    config = config or NitscheConfig()
    dofmap = dofmap or DofMap(mesh, space)
    if sigma2 is None:
        sigma2 = problem.sigma2_on(mesh)
    if len(sigma2) != mesh.n_triangles:
        raise ValueError("missing sigma^2 values")
    t2 = problem.t ** 2
    M, S, _ = element_matrices(mesh, dofmap, sigma2, problem.t)
    Aloc = sigma2[:, None, None] * M + t2 * S
    cd = dofmap.cell_dofs
    nb = cd.shape[1]
    rows = [np.repeat(cd, nb, axis=1)]
    cols = [np.tile(cd, (1, nb))]
    vals = [Aloc.reshape(len(cd), -1)]
    edges = mesh.interior_edges if interior_edges is None else np.asarray(interior_edges, dtype=np.int64)
    if t2 > 0 and len(edges):
        N = t2 * interior_nitsche_local(mesh, dofmap, edges, config.alpha)
        ed = np.concatenate([cd[mesh.edge_elements[edges, 0]], cd[mesh.edge_elements[edges, 1]]], axis=1)
        k = ed.shape[1]
        rows.append(np.repeat(ed, k, axis=1))
        cols.append(np.tile(ed, (1, k)))
        vals.append(N.reshape(len(ed), -1))
    A = _scatter(np.concatenate([r.ravel() for r in rows]),
                 np.concatenate([c.ravel() for c in cols]),
                 np.concatenate([v.ravel() for v in vals]), (dofmap.n_dofs, dofmap.n_dofs))
    if include_boundary:
        Ab, _ = assemble_nitsche_boundary(problem, mesh, space, config, dofmap=dofmap)
        A = A + Ab
    return A


def assemble_nitsche_boundary(problem, mesh, space, config=None, tags=None, dofmap=None):
    """Boundary tangential Nitsche terms and their load (zero when ``t = 0``)."""
    config = config or NitscheConfig()
    dofmap = dofmap or DofMap(mesh, space)
    tags = config.nitsche_tags(problem) if tags is None else tags
    n = dofmap.n_dofs
    if problem.t == 0 or not tags:
        return sp.csr_matrix((n, n)), np.zeros(n)
    if problem.u_D is None:
        raise ValueError("Nitsche boundary tag without tangential data")
    edges = mesh.edges_with_tag(*tags)
    if len(edges) == 0:
        return sp.csr_matrix((n, n)), np.zeros(n)
    t2 = problem.t ** 2
    Nloc = t2 * boundary_nitsche_local(mesh, dofmap, edges, config.alpha)
    ed = dofmap.cell_dofs[mesh.edge_elements[edges, 0]]
    k = ed.shape[1]
    A = _scatter(np.repeat(ed, k, axis=1), np.tile(ed, (1, k)), Nloc.reshape(len(ed), -1), (n, n))

    pts, w, _ = edge_points(mesh, edges, DATA_EDGE_POINTS)
    nrm, tau, h = mesh.normals[edges], mesh.tangents[edges], mesh.edge_lengths[edges]
    _, v, g = _edge_traces(mesh, dofmap, edges, 0, pts)
    uDt = np.einsum("eqc,ec->eq", np.asarray(problem.u_D(pts), dtype=float), tau)
    J = np.einsum("eqbc,ec->eqb", v, tau)
    D = np.einsum("eqbcd,ed,ec->eqb", g, nrm, tau)
    Floc = t2 * ((config.alpha / h)[:, None] * np.einsum("eq,eqb,eq->eb", uDt, J, w)
                 - np.einsum("eq,eqb,eq->eb", uDt, D, w))
    F = np.bincount(ed.ravel(), Floc.ravel(), minlength=n)
    return A, F


# ---------------------------------------------------------------- b, loads
def assemble_b(mesh, space, dofmap=None, g=None):
    """Divergence block ``B[K, i] = -(div phi_i, 1)_K`` and ``G[K] = (g, 1)_K``."""
    dofmap = dofmap or DofMap(mesh, space)
    elems = np.arange(mesh.n_triangles)
    pts, w = element_points(mesh, elems, 4)
    _, div, _, _ = _signed_basis(mesh, dofmap, elems, pts)
    Bl = -np.einsum("nqi,nq->ni", div, w)
    cd = dofmap.cell_dofs
    B = _scatter(np.repeat(elems[:, None], cd.shape[1], axis=1), cd, Bl,
                 (mesh.n_triangles, dofmap.n_dofs))
    if g is None:
        return B, np.zeros(mesh.n_triangles)
    pts, w = element_points(mesh, elems, DATA_QDEG)
    G = np.einsum("nq,nq->n", np.asarray(g(pts), dtype=float), w)
    return B, G


def assemble_load(problem, mesh, space, dofmap=None):
    """``(f, phi_i)`` with high-order quadrature."""
    dofmap = dofmap or DofMap(mesh, space)
    elems = np.arange(mesh.n_triangles)
    pts, w = element_points(mesh, elems, DATA_QDEG)
    val, _, _, _ = _signed_basis(mesh, dofmap, elems, pts)
    Floc = np.einsum("nqc,nqbc,nq->nb", np.asarray(problem.f(pts), dtype=float), val, w)
    return np.bincount(dofmap.cell_dofs.ravel(), Floc.ravel(), minlength=dofmap.n_dofs)


def assemble_pressure_bc(problem, mesh, space, tags=None, dofmap=None):
    """Natural boundary term ``-<p_D, v.n>`` on pressure-tagged edges."""
    dofmap = dofmap or DofMap(mesh, space)
    F = np.zeros(dofmap.n_dofs)
    tags = tuple(problem.pressure_bc) if tags is None else tuple(tags)
    for tag in tags:
        if tag in problem.normal_tags:
            raise ValueError(f"edge tag {tag!r} is both strong-normal and weak-pressure")
        edges = mesh.edges_with_tag(tag)
        if len(edges) == 0:
            continue
        pts, w, _ = edge_points(mesh, edges, DATA_EDGE_POINTS)
        _, v, _ = _edge_traces(mesh, dofmap, edges, 0, pts)
        vn = np.einsum("eqbc,ec->eqb", v, mesh.normals[edges])
        pD = np.asarray(problem.pressure_bc[tag](pts), dtype=float)
        Floc = -np.einsum("eq,eqb,eq->eb", pD, vn, w)
        ed = dofmap.cell_dofs[mesh.edge_elements[edges, 0]]
        F += np.bincount(ed.ravel(), Floc.ravel(), minlength=dofmap.n_dofs)
    return F


def normal_bc_values(problem, mesh, space, dofmap=None):
    """Fixed boundary dofs and their values (edge moments of ``u_D . n``)."""
    dofmap = dofmap or DofMap(mesh, space)
    edges = mesh.edges_with_tag(*problem.normal_tags)
    if len(edges) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    pts, w, xi = edge_points(mesh, edges, DATA_EDGE_POINTS)
    flux = np.einsum("eqc,ec->eq", np.asarray(problem.u_D(pts), dtype=float), mesh.normals[edges])
    vals = np.stack([np.einsum("eq,eq->e", flux * xi[None, :] ** j, w)
                     for j in range(space.moments_per_edge)], axis=1)
    return dofmap.edge_dofs[edges].ravel(), vals.ravel()


def apply_normal_bc(system, fixed_dofs, fixed_values):
    """Record strong normal data on ``system``; elimination happens in the solver."""
    fixed_dofs = np.asarray(fixed_dofs, dtype=np.int64)
    order = np.argsort(fixed_dofs)
    fixed_dofs, fixed_values = fixed_dofs[order], np.asarray(fixed_values)[order]
    dup = np.flatnonzero(np.diff(fixed_dofs) == 0)
    if len(dup) and not np.allclose(fixed_values[dup], fixed_values[dup + 1]):
        raise ValueError("conflicting normal data on an edge")
    keep = np.ones(len(fixed_dofs), dtype=bool)
    keep[dup + 1] = False
    system.fixed_dofs = fixed_dofs[keep]
    system.fixed_values = fixed_values[keep]
    return system


def eliminate(K, b, fixed, values):
    """Symmetric elimination of prescribed unknowns: returns (K_ff, b_f, free)."""
    n = K.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    x_fixed = np.zeros(n)
    x_fixed[fixed] = values
    b_f = b[free] - (K @ x_fixed)[free]
    return K[free][:, free], b_f, free


def assemble_mean_constraint(mesh, space=None):
    """Row ``m`` with ``m . p = integral of p`` for P0 pressures."""
    return mesh.areas.copy()


def assemble_system(problem, mesh, space, config=None, dofmap=None):
    """Assemble the complete conforming saddle-point system."""
    config = config or NitscheConfig()
    dofmap = dofmap or DofMap(mesh, space)
    sigma2 = problem.sigma2_on(mesh)
    A = assemble_ah(problem, mesh, space, config, dofmap=dofmap, sigma2=sigma2)
    Ab, Fb = assemble_nitsche_boundary(problem, mesh, space, config, dofmap=dofmap)
    B, G = assemble_b(mesh, space, dofmap=dofmap, g=problem.g)
    F = assemble_load(problem, mesh, space, dofmap) + Fb
    F += assemble_pressure_bc(problem, mesh, space, dofmap=dofmap)
    has_pressure_data = any(len(mesh.edges_with_tag(tag)) for tag in problem.pressure_bc)
    system = SaddleSystem(A=(A + Ab).tocsr(), B=B, F=F, G=G,
                          mean_row=assemble_mean_constraint(mesh, space), dofmap=dofmap,
                          fixed_dofs=np.zeros(0, dtype=np.int64), fixed_values=np.zeros(0),
                          sigma2=sigma2, use_mean_constraint=not has_pressure_data,
                          meta={"alpha": config.alpha, "t": problem.t})
    fixed, vals = normal_bc_values(problem, mesh, space, dofmap)
    if system.use_mean_constraint:
        vals = _compatible_flux(mesh, space, problem, vals, G)
    return apply_normal_bc(system, fixed, vals)


def _compatible_flux(mesh, space, problem, vals, G):
    """Remove the quadrature defect of ``int u_D.n = int g`` on a closed flux boundary.

    Without it the pressure equations are slightly incompatible and the mean
    multiplier absorbs the defect.  The correction is spread over the mean
    moments in proportion to edge length.
    """
    edges = mesh.edges_with_tag(*problem.normal_tags)
    if len(edges) != len(mesh.boundary_edges):
        return vals
    nm = space.moments_per_edge
    vals = vals.reshape(len(edges), nm).copy()
    defect = vals[:, 0].sum() - G.sum()
    vals[:, 0] -= defect * mesh.edge_lengths[edges] / mesh.edge_lengths[edges].sum()
    return vals.ravel()


def dump_coo(matrix, path):
    """Write a sparse matrix as ``row col value`` lines."""
    C = sp.coo_matrix(matrix)
    np.savetxt(path, np.column_stack([C.row, C.col, C.data]), fmt=["%d", "%d", "%.17g"])

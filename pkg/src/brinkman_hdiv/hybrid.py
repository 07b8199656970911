"""Hybridised formulation with normal (``lambda``) and tangential (``m``) multipliers.

On skeleton edges the velocity dofs are duplicated.  ``lambda`` restores
normal continuity; the weighted variable ``m = t * m_tilde`` replaces the
interior Nitsche coupling by one-sided terms

    sum_K (2 alpha / h) <m, r>
      + t [ <du/dn_K . tau, r> + <dv/dn_K . tau, m>
            - (2 alpha / h) <u_tau, r> - (2 alpha / h) <v_tau, m> ]
      + t^2 [ (2 alpha / h) <u_tau, v_tau> - <du/dn_K . tau, v_tau> - <dv/dn_K . tau, u_tau> ]

which stays well posed as ``t -> 0``.  Eliminating ``(u, p)`` subdomain by
subdomain leaves the skeleton system ``S [lambda; m] = r`` with

    S = [[C H C^T, C H D^T], [D H C^T, D H D^T + M]],
    H = A^-1 B^T (B A^-1 B^T)^-1 B A^-1 - A^-1.

``H`` is minus the velocity block of the local saddle inverse and hence
negative semi-definite, so ``S`` is symmetric but indefinite for ``t > 0``
(and at ``t = 0`` the ``lambda`` block is negative semi-definite).
"""
from dataclasses import dataclass, field
import logging
import time

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .assembly import (NitscheConfig, _compatible_flux, _scatter, _signed_basis, apply_normal_bc,
                       assemble_ah, assemble_b, assemble_load, assemble_nitsche_boundary,
                       assemble_pressure_bc, normal_bc_values)
from .solve import (BorderedSolver, SolverError, SolverReport, direct_solve, estimate_extreme_eigenvalues, factorize,
                    solve_spd_cg, symmetric_scaling)
from .spaces import DofMap, VelocityField, edge_points

log = logging.getLogger(__name__)

EDGE_POINTS = 4
TANGENTIAL_MODES = ("hybrid", "nitsche")


class HybridError(RuntimeError):
    pass


# ---------------------------------------------------------------- skeleton
def make_dd_skeleton(mesh, nsub):
    """Geometric partition into ``nsub`` subdomains and the interface skeleton.

    Elements are assigned by barycentre to a regular ``nx x ny`` grid of
    boxes over the bounding box (``nx * ny = nsub``, as square as
    possible).  Returns ``(skeleton_edges, subdomain_ids)``.
    """
    nsub = int(nsub)
    if nsub < 1:
        raise ValueError("need at least one subdomain")
    small = max(d for d in range(1, int(np.sqrt(nsub)) + 1) if nsub % d == 0)
    (x0, y0), (x1, y1) = mesh.bounding_box()
    # more boxes along the longer side
    nx, ny = (nsub // small, small) if x1 - x0 >= y1 - y0 else (small, nsub // small)
    c = mesh.centroids
    ix = np.clip(((c[:, 0] - x0) / (x1 - x0) * nx).astype(int), 0, nx - 1)
    iy = np.clip(((c[:, 1] - y0) / (y1 - y0) * ny).astype(int), 0, ny - 1)
    sub = iy * nx + ix
    counts = np.bincount(sub, minlength=nsub)
    if np.any(counts == 0):
        raise ValueError(f"partition into {nsub} subdomains leaves empty subdomains")
    ee = mesh.edge_elements[mesh.interior_edges]
    cut = sub[ee[:, 0]] != sub[ee[:, 1]]
    keep = ~cut
    graph = sp.coo_matrix((np.ones(keep.sum()), (ee[keep, 0], ee[keep, 1])),
                          shape=(mesh.n_triangles,) * 2)
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp != nsub:
        raise ValueError(f"partition into {nsub} subdomains is not edge-connected ({ncomp} components)")
    return mesh.interior_edges[cut], sub


def full_skeleton(mesh):
    """Every interior edge, each element its own subdomain."""
    return mesh.interior_edges.copy(), np.arange(mesh.n_triangles)


# ------------------------------------------------------------ hybrid blocks
@dataclass
class HybridSystem:
    """Global sparse blocks of the hybrid system and its bookkeeping."""
    mesh: object
    space: object
    dofmap: DofMap
    skeleton: np.ndarray
    subdomain: np.ndarray
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    D: sp.csr_matrix
    M: sp.csr_matrix
    F: np.ndarray
    G: np.ndarray
    fixed_dofs: np.ndarray
    fixed_values: np.ndarray
    sigma2: np.ndarray
    t: float
    tangential: str = "hybrid"
    m_degree: int = 1
    closed: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_p(self):
        return self.B.shape[0]

    @property
    def n_lambda(self):
        return self.C.shape[0]

    @property
    def n_m(self):
        return self.M.shape[0]

    @property
    def n_skeleton(self):
        return self.n_lambda + self.n_m

    @property
    def lam_per_edge(self):
        return self.space.moments_per_edge

    @property
    def m_per_edge(self):
        return self.m_degree + 1 if self.tangential == "hybrid" else 0

    def full_matrix(self):
        """Block matrix in the order ``(u, p, lambda, m)``."""
        rows = [[self.A, self.B.T, self.C.T, self.D.T if self.n_m else None],
                [self.B, None, None, None],
                [self.C, None, None, None]]
        if self.n_m:
            rows.append([self.D, None, None, self.M])
        else:
            rows = [r[:3] for r in rows]
        return sp.bmat(rows, format="csr")

    def full_rhs(self):
        return np.concatenate([self.F, -self.G, np.zeros(self.n_lambda + self.n_m)])

    def skeleton_null(self):
        """Null vector ``(lambda_0 = 1, rest 0)`` of ``S`` for closed flux boundaries."""
        if not self.closed:
            return None
        w = np.zeros(self.n_skeleton)
        w[np.arange(len(self.skeleton)) * self.lam_per_edge] = 1.0
        return w

    def full_null(self):
        """Null vector ``(u = 0, p = 1, lambda_0 = 1, m = 0)`` of the full matrix."""
        if not self.closed:
            return None
        w = np.zeros(self.n_u + self.n_p + self.n_skeleton)
        w[self.n_u:self.n_u + self.n_p] = 1.0
        w[self.n_u + self.n_p:] = self.skeleton_null()
        return w

    def m_evaluator(self, m, weighted=True):
        """``f(edges, pts)`` evaluating the multiplier (``t * m_tilde`` when ``weighted``)."""
        pos = -np.ones(self.mesh.n_edges, dtype=np.int64)
        pos[self.skeleton] = np.arange(len(self.skeleton))
        k = self.m_per_edge
        coeffs = np.asarray(m, dtype=float).reshape(len(self.skeleton), k)
        scale = 1.0 if weighted else (1.0 / self.t if self.t > 0 else 0.0)

        def ev(edges, pts):
            idx = pos[edges]
            if np.any(idx < 0):
                raise ValueError("edge is not on the skeleton")
            a = self.mesh.vertices[self.mesh.edges[edges, 0]]
            b = self.mesh.vertices[self.mesh.edges[edges, 1]]
            d = b - a
            xi = 2.0 * np.einsum("eqc,ec->eq", pts - a[:, None, :], d) / np.einsum("ec,ec->e", d, d)[:, None] - 1.0
            basis = np.stack([xi ** j for j in range(k)], axis=-1)
            return scale * np.einsum("eqj,ej->eq", basis, coeffs[idx])
        return ev


def _edge_basis(xi, k):
    return np.stack([xi ** j for j in range(k)], axis=-1)


def build_hybrid_system(problem, mesh, space, config=None, skeleton=None, subdomain=None,
                        tangential="hybrid", m_degree=1):
    """Assemble the hybrid blocks.

    ``skeleton`` defaults to all interior edges (full hybridisation) with
    one subdomain per element.  ``tangential="nitsche"`` keeps the
    conforming interior Nitsche terms and hybridises only the normal
    continuity (the exact-equivalence variant).
    """
    config = config or NitscheConfig()
    if tangential not in TANGENTIAL_MODES:
        raise ValueError(f"tangential must be one of {TANGENTIAL_MODES}")
    if m_degree not in (0, 1):
        raise ValueError("m_degree must be 0 or 1")
    if skeleton is None:
        skeleton, subdomain = full_skeleton(mesh)
    skeleton = np.unique(np.asarray(skeleton, dtype=np.int64))
    if len(skeleton) == 0:
        raise HybridError("empty skeleton")
    if np.any(mesh.edge_elements[skeleton, 1] < 0):
        raise HybridError("skeleton edges must be interior")
    if subdomain is None:
        subdomain = np.arange(mesh.n_triangles)
    dofmap = DofMap(mesh, space, broken=skeleton)
    sigma2 = problem.sigma2_on(mesh)
    t, alpha = problem.t, config.alpha
    ns = len(skeleton)
    nl = space.moments_per_edge
    nmd = m_degree + 1 if tangential == "hybrid" else 0
    nu = dofmap.n_dofs

    conforming_edges = mesh.interior_edges if tangential == "nitsche" else np.setdiff1d(mesh.interior_edges, skeleton)
    A = assemble_ah(problem, mesh, space, config, dofmap=dofmap, sigma2=sigma2, interior_edges=conforming_edges)
    Ab, Fb = assemble_nitsche_boundary(problem, mesh, space, config, dofmap=dofmap)
    B, G = assemble_b(mesh, space, dofmap=dofmap, g=problem.g)
    F = assemble_load(problem, mesh, space, dofmap) + Fb + assemble_pressure_bc(problem, mesh, space, dofmap=dofmap)

    pts, w, xi = edge_points(mesh, skeleton, EDGE_POINTS)
    n = mesh.normals[skeleton]
    tau = mesh.tangents[skeleton]
    h = mesh.edge_lengths[skeleton]
    lam_basis = _edge_basis(xi, nl)
    Crows, Ccols, Cvals = [], [], []
    Drows, Dcols, Dvals = [], [], []
    Arows, Acols, Avals = [], [], []
    lam_dofs = np.arange(ns * nl).reshape(ns, nl)
    m_dofs = np.arange(ns * nmd).reshape(ns, nmd)
    for side, sgn in ((0, 1.0), (1, -1.0)):
        elems = mesh.edge_elements[skeleton, side]
        val, _, grad, _ = _signed_basis(mesh, dofmap, elems, pts)
        cd = dofmap.cell_dofs[elems]
        nK = sgn * n
        vn = np.einsum("eqbc,ec->eqb", val, nK)
        Cl = np.einsum("eqb,qj,eq->ejb", vn, lam_basis, w)
        Crows.append(np.repeat(lam_dofs[:, :, None], cd.shape[1], axis=2))
        Ccols.append(np.repeat(cd[:, None, :], nl, axis=1))
        Cvals.append(Cl)
        if tangential != "hybrid" or t == 0:
            continue
        T = np.einsum("eqbc,ec->eqb", val, tau)
        Dn = np.einsum("eqbcd,ed,ec->eqb", grad, nK, tau)
        pen = (2 * alpha / h)[:, None, None]
        UU = (pen * np.einsum("eqi,eqj,eq->eij", T, T, w)
              - np.einsum("eqj,eqi,eq->eij", Dn, T, w) - np.einsum("eqi,eqj,eq->eij", Dn, T, w))
        Arows.append(np.repeat(cd[:, :, None], cd.shape[1], axis=2))
        Acols.append(np.repeat(cd[:, None, :], cd.shape[1], axis=1))
        Avals.append(t * t * UU)
        mb = _edge_basis(xi, nmd)
        MU = (np.einsum("eqj,qr,eq->erj", Dn, mb, w)
              - pen * np.einsum("eqj,qr,eq->erj", T, mb, w))
        Drows.append(np.repeat(m_dofs[:, :, None], cd.shape[1], axis=2))
        Dcols.append(np.repeat(cd[:, None, :], nmd, axis=1))
        Dvals.append(t * MU)

    def cat(parts):
        return np.concatenate([p.ravel() for p in parts]) if parts else np.zeros(0)
    C = _scatter(cat(Crows).astype(np.int64), cat(Ccols).astype(np.int64), cat(Cvals), (ns * nl, nu))
    if Arows:
        A = A + _scatter(cat(Arows).astype(np.int64), cat(Acols).astype(np.int64), cat(Avals), (nu, nu))
    if Drows:
        D = _scatter(cat(Drows).astype(np.int64), cat(Dcols).astype(np.int64), cat(Dvals), (ns * nmd, nu))
    else:
        D = sp.csr_matrix((ns * nmd, nu))
    if nmd:
        mb = _edge_basis(xi, nmd)
        Mloc = (4 * alpha / h)[:, None, None] * np.einsum("qr,qs,eq->ers", mb, mb, w)
        M = _scatter(np.repeat(m_dofs[:, :, None], nmd, axis=2), np.repeat(m_dofs[:, None, :], nmd, axis=1),
                     Mloc, (ns * nmd, ns * nmd))
    else:
        M = sp.csr_matrix((0, 0))
    has_pressure_data = any(len(mesh.edges_with_tag(tag)) for tag in problem.pressure_bc)
    hs = HybridSystem(mesh=mesh, space=space, dofmap=dofmap, skeleton=skeleton,
                      subdomain=np.asarray(subdomain), A=(A + Ab).tocsr(), B=B, C=C, D=D.tocsr(), M=M,
                      F=F, G=G, fixed_dofs=np.zeros(0, dtype=np.int64), fixed_values=np.zeros(0),
                      sigma2=sigma2, t=t, tangential=tangential, m_degree=m_degree,
                      closed=not has_pressure_data, meta={"alpha": alpha})
    fixed, vals = normal_bc_values(problem, mesh, space, dofmap)
    if hs.closed:
        vals = _compatible_flux(mesh, space, problem, vals, G)
    apply_normal_bc(hs, fixed, vals)
    return hs


# ------------------------------------------------------------- condensation
@dataclass
class Condensed:
    """Skeleton matrix, reduced load and the data needed for recovery."""
    S: sp.csr_matrix
    r: np.ndarray
    recover: callable
    H_blocks: list = field(default_factory=list)


def _lookup(Mat, rows, cols):
    """Dense gather ``Mat[rows[..., i], cols[..., j]]`` with ``-1`` indices giving 0."""
    R = np.broadcast_to(rows[..., :, None], rows.shape + (cols.shape[-1],))
    Cc = np.broadcast_to(cols[..., None, :], R.shape)
    ok = (R >= 0) & (Cc >= 0)
    out = np.zeros(R.shape)
    if ok.any():
        out[ok] = np.asarray(Mat[R[ok], Cc[ok]]).ravel()
    return out


def local_H(A_e, B_e):
    """Dense ``H = A^-1 B^T (B A^-1 B^T)^-1 B A^-1 - A^-1`` for one block."""
    Ai = np.linalg.inv(A_e)
    AB = Ai @ B_e.T
    return AB @ np.linalg.solve(B_e @ AB, AB.T) - Ai


def _skeleton_index(hs):
    """Per element: global skeleton unknowns (``lambda`` then ``m``) of its edges, ``-1`` padded."""
    pos = -np.ones(hs.mesh.n_edges, dtype=np.int64)
    pos[hs.skeleton] = np.arange(len(hs.skeleton))
    te = pos[hs.mesh.tri_edges]
    nl, nmd = hs.lam_per_edge, hs.m_per_edge
    lam = np.where(te[..., None] >= 0, te[..., None] * nl + np.arange(nl), -1)
    parts = [lam.reshape(len(te), -1)]
    if nmd:
        m = np.where(te[..., None] >= 0, hs.n_lambda + te[..., None] * nmd + np.arange(nmd), -1)
        parts.append(m.reshape(len(te), -1))
    return np.concatenate(parts, axis=1)


def _coupling(hs):
    """Sparse ``(n_skeleton x n_u)`` coupling ``[C; D]``."""
    return sp.vstack([hs.C, hs.D]).tocsr() if hs.n_m else hs.C.tocsr()


def condense(hs):
    """Eliminate ``(u, p)`` block by block; blocks are the subdomains of ``hs``."""
    if hs.tangential != "hybrid" and hs.t > 0:
        raise HybridError("normal-only hybridisation with t > 0 couples elements through Nitsche terms; "
                          "use solve_hybrid (monolithic path)")
    sub = hs.subdomain
    if len(np.unique(sub)) == hs.mesh.n_triangles:
        return _condense_elements(hs)
    return _condense_subdomains(hs)


def _fixed_mask(hs):
    mask = np.zeros(hs.n_u, dtype=bool)
    mask[hs.fixed_dofs] = True
    xfix = np.zeros(hs.n_u)
    xfix[hs.fixed_dofs] = hs.fixed_values
    return mask, xfix


def _condense_elements(hs):
    mesh, dm = hs.mesh, hs.dofmap
    nt = mesh.n_triangles
    cd = dm.cell_dofs
    nb = cd.shape[1]
    elems = np.arange(nt)
    K = np.zeros((nt, nb + 1, nb + 1))
    K[:, :nb, :nb] = _lookup(hs.A, cd, cd)
    Bl = _lookup(hs.B, elems[:, None], cd)[:, 0, :]
    K[:, nb, :nb] = Bl
    K[:, :nb, nb] = Bl
    sk = _skeleton_index(hs)
    Gc = _lookup(_coupling(hs), sk, cd)  # (nt, nsk_loc, nb)
    mask, xfix = _fixed_mask(hs)
    fx = mask[cd]
    xf = np.where(fx, xfix[cd], 0.0)
    rhs = np.concatenate([hs.F[cd], -hs.G[:, None]], axis=1)
    rhs -= np.einsum("nij,nj->ni", K[:, :, :nb], xf)
    r_sk = -np.einsum("nsj,nj->ns", Gc, xf)
    # symmetric elimination of prescribed dofs inside the local blocks
    fx1 = np.concatenate([fx, np.zeros((nt, 1), dtype=bool)], axis=1)
    K = np.where(fx1[:, :, None] | fx1[:, None, :], 0.0, K)
    idx = np.arange(nb)
    K[:, idx, idx] = np.where(fx, 1.0, K[:, idx, idx])
    rhs[:, :nb] = np.where(fx, xf, rhs[:, :nb])
    Gc = np.where(fx[:, None, :], 0.0, Gc)
    try:
        Kinv = np.linalg.inv(K)
    except np.linalg.LinAlgError as exc:
        bad = [e for e in range(nt) if abs(np.linalg.det(K[e])) < 1e-300]
        raise HybridError(f"singular local block on elements {bad[:5]}") from exc
    Gp = np.concatenate([Gc, np.zeros(Gc.shape[:2] + (1,))], axis=2)
    S_loc = -np.einsum("nsi,nij,ntj->nst", Gp, Kinv, Gp)
    r_loc = r_sk - np.einsum("nsi,nij,nj->ns", Gp, Kinv, rhs)
    valid = sk >= 0
    R = np.broadcast_to(sk[:, :, None], S_loc.shape)
    Cc = np.broadcast_to(sk[:, None, :], S_loc.shape)
    ok = valid[:, :, None] & valid[:, None, :]
    nsk = hs.n_skeleton
    S = sp.coo_matrix((S_loc[ok], (R[ok], Cc[ok])), shape=(nsk, nsk)).tocsr()
    if hs.n_m:
        S = S + sp.block_diag([sp.csr_matrix((hs.n_lambda, hs.n_lambda)), hs.M]).tocsr()
    r = np.bincount(sk[valid], r_loc[valid], minlength=nsk)

    def recover(s):
        se = np.where(valid, s[np.maximum(sk, 0)], 0.0)
        x = np.einsum("nij,nj->ni", Kinv, rhs - np.einsum("nsi,ns->ni", Gp, se))
        u = np.zeros(hs.n_u)
        u[cd] = x[:, :nb]
        return u, x[:, nb]
    return Condensed(S=S.tocsr(), r=r, recover=recover)


DENSE_SCHUR_LIMIT = 4000


def _schur_block(K, G):
    """``-G K^-1 G^T`` for a symmetric indefinite ``K``, symmetric by construction.

    Uses a scaled Bunch-Kaufman factorisation ``K = L D L^T``: with
    ``D = Q diag(mu) Q^T`` and ``W = |mu|^(-1/2) Q^T L^-1 G^T`` the block is
    ``-W^T sign(mu) W``.  Large blocks fall back to sparse LU.
    """
    n = K.shape[0]
    if len(G) == 0:
        return np.zeros((0, 0))
    d = symmetric_scaling(sp.csr_matrix(K))
    if n > DENSE_SCHUR_LIMIT:
        solve, _ = factorize(sp.diags(d) @ K @ sp.diags(d), "superlu")
        Gd = G * d
        X = np.column_stack([solve(g) for g in Gd])
        return -Gd @ X
    Kd = d[:, None] * (K.toarray() if sp.issparse(K) else K) * d[None, :]
    lu, D, perm = sla.ldl(Kd, lower=True)
    Y = sla.solve_triangular(lu[perm], (G * d).T[perm], lower=True, unit_diagonal=True)
    off = np.diag(D, -1).copy()
    mu, Q = sla.eigh_tridiagonal(np.diag(D).copy(), off) if np.any(off) else (np.diag(D).copy(), None)
    if np.any(mu == 0):
        raise HybridError("singular local block")
    W = Y if Q is None else Q.T @ Y
    W = W / np.sqrt(np.abs(mu))[:, None]
    return -(W.T * np.sign(mu)) @ W


def _condense_subdomains(hs):
    mesh, dm = hs.mesh, hs.dofmap
    mask, xfix = _fixed_mask(hs)
    GC = _coupling(hs).tocsc()
    A = hs.A.tocsr()
    B = hs.B.tocsr()
    nsk = hs.n_skeleton
    S = sp.lil_matrix((nsk, nsk))
    S_parts = []
    r = np.zeros(nsk)
    blocks = []
    for s in np.unique(hs.subdomain):
        elems = np.flatnonzero(hs.subdomain == s)
        U = np.unique(dm.cell_dofs[elems])
        Ufree = U[~mask[U]]
        Ufix = U[mask[U]]
        Ks = sp.bmat([[A[Ufree][:, Ufree], B[elems][:, Ufree].T],
                      [B[elems][:, Ufree], None]], format="csc")
        rhs = np.concatenate([hs.F[Ufree] - A[Ufree][:, Ufix] @ xfix[Ufix],
                              -hs.G[elems] - B[elems][:, Ufix] @ xfix[Ufix]])
        Gs = GC[:, Ufree]
        rows = np.unique(Gs.nonzero()[0])
        Gsub = Gs[rows].toarray()
        r[rows] -= GC[rows][:, Ufix] @ xfix[Ufix]
        try:
            solve, _ = factorize(Ks, "superlu")
        except SolverError as exc:
            raise HybridError(f"singular local block in subdomain {s}: {exc}") from exc
        Gp = np.hstack([Gsub, np.zeros((len(rows), len(elems)))])
        y = solve(rhs)
        S_parts.append((rows, _schur_block(Ks, Gp)))
        r[rows] -= Gp @ y
        blocks.append((elems, Ufree, rows, solve, rhs, Gp))
    Srows, Scols, Svals = [], [], []
    for rows, Sl in S_parts:
        Srows.append(np.repeat(rows, len(rows)))
        Scols.append(np.tile(rows, len(rows)))
        Svals.append(Sl.ravel())
    S = sp.coo_matrix((np.concatenate(Svals), (np.concatenate(Srows), np.concatenate(Scols))),
                      shape=(nsk, nsk)).tocsr()
    if hs.n_m:
        S = S + sp.block_diag([sp.csr_matrix((hs.n_lambda, hs.n_lambda)), hs.M]).tocsr()

    def recover(svec):
        u = xfix.copy()
        p = np.zeros(hs.n_p)
        for elems, Ufree, rows, solve, rhs, Gp in blocks:
            x = solve(rhs - Gp.T @ svec[rows])
            u[Ufree] = x[:len(Ufree)]
            p[elems] = x[len(Ufree):]
        return u, p
    return Condensed(S=S, r=r, recover=recover)


# ------------------------------------------------------------------- solve
@dataclass
class HybridSolution:
    u: VelocityField
    p: np.ndarray
    lam: np.ndarray
    m: np.ndarray
    system: HybridSystem
    report: SolverReport
    skeleton_matrix: sp.csr_matrix = None

    @property
    def n_dofs(self):
        return self.system.n_u + self.system.n_p + self.system.n_skeleton

    def m_evaluator(self):
        return self.system.m_evaluator(self.m, weighted=True)


def solve_skeleton(S, r, null=None, method="direct", tol=1e-10, n_lambda=None):
    """Solve the (symmetric, in general indefinite) skeleton system.

    ``method`` is ``"direct"`` (sparse LU), ``"minres"`` or ``"cg"``.  CG is
    only meaningful when the operator is definite up to sign per block, as
    at ``t = 0`` where ``S = (C H C^T) + M``: the ``lambda`` block is solved
    as ``-C H C^T``.  For ``t > 0`` CG meets negative curvature and raises.
    """
    n = S.shape[0]
    t0 = time.perf_counter()
    if method == "direct":
        x, _, rep = direct_solve(S, r, tol=tol, null=null, constraint=null)
        return x, rep
    w = None if null is None else null / np.linalg.norm(null)

    def proj(v):
        return v if w is None else v - w * (w @ v)
    if method == "minres":
        op = spla.LinearOperator((n, n), matvec=lambda v: proj(S @ proj(v)), dtype=float)
        x, info = spla.minres(op, proj(r), rtol=tol * 1e-2, maxiter=20 * n)
        x = proj(x)
        res = np.linalg.norm(S @ x - proj(r)) / max(np.linalg.norm(r), 1e-300)
        if info != 0 or res > tol * 1e2:
            raise SolverError(f"MINRES failed (info={info}, residual {res:.2e})")
        return x, SolverReport("minres", 0, float(res), time.perf_counter() - t0)
    if method == "cg":
        nl = n if n_lambda is None else n_lambda
        Sl = S[:nl, :nl]
        if nl < n and abs(S[:nl, nl:]).max() > 0:
            # coupled blocks: plain CG on the full matrix, which detects indefiniteness
            return solve_spd_cg(lambda v: proj(S @ proj(v)), proj(r), tol=tol)
        wl = None if w is None else w[:nl] / np.linalg.norm(w[:nl])

        def projl(v):
            return v if wl is None else v - wl * (wl @ v)
        xl, rep = solve_spd_cg(lambda v: -projl(Sl @ projl(v)), -projl(r[:nl]), tol=tol)
        x = np.zeros(n)
        x[:nl] = projl(xl)
        if nl < n:
            xm, rep2 = solve_spd_cg(S[nl:, nl:], r[nl:], tol=tol)
            x[nl:] = xm
            rep.iterations += rep2.iterations
        rep.method = "cg-blocks"
        return x, rep
    raise ValueError(f"unknown skeleton solver {method!r}")


def solve_hybrid(problem, mesh, space, config=None, skeleton=None, subdomain=None,
                 tangential="hybrid", method="direct", m_degree=1, tol=1e-10):
    """Hybridised solve; returns :class:`HybridSolution` with zero-mean pressure."""
    hs = build_hybrid_system(problem, mesh, space, config, skeleton, subdomain, tangential, m_degree)
    if tangential == "nitsche" and hs.t > 0:
        u, p, lam, m, rep = _solve_monolithic(hs, tol)
        S = None
    else:
        cond = condense(hs)
        s, rep = solve_skeleton(cond.S, cond.r, hs.skeleton_null(), method, tol, hs.n_lambda)
        u, p = cond.recover(s)
        lam, m = s[:hs.n_lambda], s[hs.n_lambda:]
        S = cond.S
    if hs.closed:
        c = (p @ hs.mesh.areas) / hs.mesh.areas.sum()
        p = p - c
        lam = lam.copy()
        lam[::hs.lam_per_edge] -= c
    return HybridSolution(VelocityField(hs.dofmap, u), p, lam, m, hs, rep, S)


def _solve_monolithic(hs, tol):
    from .assembly import eliminate

    K = hs.full_matrix()
    b = hs.full_rhs()
    Kf, bf, free = eliminate(K, b, hs.fixed_dofs, hs.fixed_values)
    null = None
    if hs.closed:
        null = hs.full_null()[free]
    xf, _, rep = direct_solve(Kf, bf, tol=tol, null=null, constraint=null)
    x = np.zeros(K.shape[0])
    x[hs.fixed_dofs] = hs.fixed_values
    x[free] = xf
    nu, npr, nl = hs.n_u, hs.n_p, hs.n_lambda
    return x[:nu], x[nu:nu + npr], x[nu + npr:nu + npr + nl], x[nu + npr + nl:], rep


def to_conforming(sol, conforming_dofmap):
    """Map a hybrid velocity (continuous normal moments) to conforming coefficients."""
    dm = sol.system.dofmap
    u = np.zeros(conforming_dofmap.n_dofs)
    u[conforming_dofmap.edge_dofs.ravel()] = sol.u.coeffs[dm.edge_dofs.ravel()]
    return u


# ---------------------------------------------------------------- spectra
def skeleton_condition(S, null=None, iters=60):
    """Spectral condition number ``max|eig| / min|eig|`` of ``S`` on the complement of ``null``."""
    n = S.shape[0]
    solve = None
    if n > 400:
        solver = BorderedSolver(S, null, null)
        solve = lambda v: solver.solve(v)[0]  # noqa: E731
    return estimate_extreme_eigenvalues(S, n, iters=iters, solve=solve, nullspace=null)


def skeleton_inertia(S, null=None, tol=1e-9):
    """Counts of positive, negative and (numerically) zero eigenvalues of a small ``S``."""
    ev = np.linalg.eigvalsh(S.toarray() if sp.issparse(S) else S)
    scale = np.abs(ev).max()
    pos = int(np.sum(ev > tol * scale))
    neg = int(np.sum(ev < -tol * scale))
    return pos, neg, len(ev) - pos - neg

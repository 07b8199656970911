"""Parameter-weighted norms, exact errors and the residual error estimator.

Velocity norm::

    ||v||^2 = sum_K sigma^2 ||v||_K^2
              + t^2 [ sum_K ||grad v||_K^2 + sum_E h_E^-1 ||[v_tau]||_E^2 ]

Pressure norm::

    |||q|||^2 = sum_K h_K^2 / (sigma^2 h_K^2 + t^2) ||grad q||_K^2
                + sum_E h_E / (sigma_E^2 h_E^2 + t^2) ||[q]||_E^2

Edge sums run over interior edges plus boundary edges carrying Nitsche
(velocity) or pressure (pressure) data, where the jump is taken against the
boundary datum.
"""
from dataclasses import dataclass, field

import numpy as np

from .problem import sigma_bar_sq
from .spaces import ScalarField, VelocityField, edge_points, element_points

QDEG = 10
EDGE_NPTS = 8


# ------------------------------------------------------------ field adapters
def vector_evaluator(v):
    """Return ``f(elems, points) -> (values, gradients)`` for ``v``.

    ``v`` may be a :class:`VelocityField`, an ``(u, grad_u)`` pair of
    callables on points, or an evaluator already.
    """
    if isinstance(v, VelocityField):
        return v.evaluate
    if isinstance(v, tuple):
        u, gu = v
        return lambda elems, pts: (np.asarray(u(pts), dtype=float), np.asarray(gu(pts), dtype=float))
    return v


def scalar_evaluator(q):
    if isinstance(q, ScalarField):
        return q.evaluate
    if isinstance(q, tuple):
        p, gp = q
        return lambda elems, pts: (np.asarray(p(pts), dtype=float), np.asarray(gp(pts), dtype=float))
    return q


def difference(a, b):
    """Evaluator of ``a - b`` for two vector or scalar evaluators."""
    def ev(elems, pts):
        va, ga = a(elems, pts)
        vb, gb = b(elems, pts)
        return va - vb, ga - gb
    return ev


def scaled(a, c):
    def ev(elems, pts):
        va, ga = a(elems, pts)
        return c * va, c * ga
    return ev


# ------------------------------------------------------------------- norms
def _norm_edges(mesh, tags):
    tags = tuple(tags or ())
    return mesh.interior_edges, (mesh.edges_with_tag(*tags) if tags else np.zeros(0, dtype=np.int64))


def _side_values(ev, mesh, edges, side, pts):
    elems = mesh.edge_elements[edges, side]
    return ev(elems, pts)


def velocity_norm_parts(v, mesh, sigma2, t, nitsche_tags=(), u_D=None, skeleton_m=None):
    """Squared contributions ``(mass, gradient, jump)`` of the velocity norm.

    ``skeleton_m`` optionally gives ``(edges, m_eval)`` for the hybrid norm:
    on those edges the jump term is replaced by
    ``sum_sides (2 / h_E) ||v_K,tau - m||^2`` where ``m_eval(edges, pts)``
    returns the unweighted tangential multiplier.
    """
    ev = vector_evaluator(v)
    elems = np.arange(mesh.n_triangles)
    pts, w = element_points(mesh, elems, QDEG)
    val, grad = ev(elems, pts)
    mass = np.einsum("n,nqc,nq->", sigma2, val ** 2, w)
    gradient = np.einsum("nqcd,nq->", grad ** 2, w)
    jump = 0.0
    if t > 0:
        interior, bnd = _norm_edges(mesh, nitsche_tags)
        if skeleton_m is not None:
            sk, m_eval = skeleton_m
            interior = np.setdiff1d(interior, sk)
        jump += _tangential_jump_sq(ev, mesh, interior).sum()
        if len(bnd):
            jump += _boundary_tangential_sq(ev, mesh, bnd, u_D).sum()
        if skeleton_m is not None and len(sk):
            jump += _hybrid_side_sq(ev, mesh, sk, m_eval).sum()
    return float(mass), float(t ** 2 * gradient), float(t ** 2 * jump)


def velocity_norm(v, mesh, sigma2, t, nitsche_tags=(), u_D=None, skeleton_m=None):
    """Mesh-dependent velocity norm (hybrid variant when ``skeleton_m`` is given)."""
    return float(np.sqrt(sum(velocity_norm_parts(v, mesh, sigma2, t, nitsche_tags, u_D, skeleton_m))))


def _tangential_jump_sq(ev, mesh, edges):
    """``h_E^-1 ||[v_tau]||_E^2`` per edge."""
    if len(edges) == 0:
        return np.zeros(0)
    pts, w, _ = edge_points(mesh, edges, EDGE_NPTS)
    tau = mesh.tangents[edges]
    vl, _ = _side_values(ev, mesh, edges, 0, pts)
    vr, _ = _side_values(ev, mesh, edges, 1, pts)
    j = np.einsum("eqc,ec->eq", vl - vr, tau)
    return np.einsum("eq,eq->e", j ** 2, w) / mesh.edge_lengths[edges]


def _boundary_tangential_sq(ev, mesh, edges, u_D):
    pts, w, _ = edge_points(mesh, edges, EDGE_NPTS)
    tau = mesh.tangents[edges]
    vl, _ = _side_values(ev, mesh, edges, 0, pts)
    d = vl if u_D is None else vl - np.asarray(u_D(pts), dtype=float)
    j = np.einsum("eqc,ec->eq", d, tau)
    return np.einsum("eq,eq->e", j ** 2, w) / mesh.edge_lengths[edges]


def _hybrid_side_sq(ev, mesh, edges, m_eval):
    """``sum_sides (2 / h_E) ||v_K,tau - m||_E^2`` per edge."""
    pts, w, _ = edge_points(mesh, edges, EDGE_NPTS)
    tau = mesh.tangents[edges]
    m = m_eval(edges, pts)
    out = np.zeros(len(edges))
    for side in (0, 1):
        v, _ = _side_values(ev, mesh, edges, side, pts)
        d = np.einsum("eqc,ec->eq", v, tau) - m
        out += np.einsum("eq,eq->e", d ** 2, w)
    return 2.0 * out / mesh.edge_lengths[edges]


def pressure_weights(mesh, sigma2, t, edges):
    h = mesh.edge_lengths[edges]
    return h / (sigma_bar_sq(sigma2, mesh, edges) * h ** 2 + t ** 2)


def pressure_norm_parts(q, mesh, sigma2, t, pressure_bc=None):
    """Squared element and edge contributions of the pressure norm."""
    ev = scalar_evaluator(q)
    elems = np.arange(mesh.n_triangles)
    pts, w = element_points(mesh, elems, QDEG)
    _, grad = ev(elems, pts)
    h = mesh.diameters
    wk = h ** 2 / (sigma2 * h ** 2 + t ** 2)
    elem = float(np.einsum("n,nqd,nq->", wk, grad ** 2, w))
    edges = mesh.interior_edges
    edge = 0.0
    if len(edges):
        pts_e, we, _ = edge_points(mesh, edges, EDGE_NPTS)
        ql, _ = _side_values(ev, mesh, edges, 0, pts_e)
        qr, _ = _side_values(ev, mesh, edges, 1, pts_e)
        edge += float(np.sum(pressure_weights(mesh, sigma2, t, edges)
                             * np.einsum("eq,eq->e", (ql - qr) ** 2, we)))
    for tag, pD in (pressure_bc or {}).items():
        bnd = mesh.edges_with_tag(tag)
        if len(bnd) == 0:
            continue
        pts_e, we, _ = edge_points(mesh, bnd, EDGE_NPTS)
        ql, _ = _side_values(ev, mesh, bnd, 0, pts_e)
        d = ql - np.asarray(pD(pts_e), dtype=float)
        edge += float(np.sum(pressure_weights(mesh, sigma2, t, bnd) * np.einsum("eq,eq->e", d ** 2, we)))
    return elem, edge


def pressure_norm(q, mesh, sigma2, t, pressure_bc=None):
    return float(np.sqrt(sum(pressure_norm_parts(q, mesh, sigma2, t, pressure_bc))))


# ---------------------------------------------------------------- estimator
@dataclass
class ErrorReport:
    """Estimator contributions, exact errors and derived diagnostics."""
    eta_K: np.ndarray
    eta_E: np.ndarray
    osc_K: np.ndarray
    n_dofs: int
    t: float
    err_u: float = np.nan
    err_p: float = np.nan
    norm_u: float = np.nan
    norm_p: float = np.nan
    h_max: float = np.nan
    include_oscillation: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def eta(self):
        """Global estimator ``sqrt(sum eta_K^2 + sum eta_E^2)``."""
        s = np.sum(self.eta_K ** 2) + np.sum(self.eta_E ** 2)
        if self.include_oscillation:
            s += np.sum(self.osc_K ** 2)
        return float(np.sqrt(s))

    @property
    def oscillation(self):
        return float(np.sqrt(np.sum(self.osc_K ** 2)))

    @property
    def err_total(self):
        return float(np.hypot(self.err_u, self.err_p))

    @property
    def err_total_rel(self):
        return self.err_total / float(np.hypot(self.norm_u, self.norm_p))

    @property
    def effectivity(self):
        return self.eta / self.err_total if self.err_total > 0 else np.inf

    @property
    def h_over_t(self):
        """Regime diagnostic ``1 / (t sqrt(N))`` (infinite for ``t = 0``)."""
        return np.inf if self.t == 0 else 1.0 / (self.t * np.sqrt(self.n_dofs))

    def element_indicators(self, mesh):
        """Squared per-element values with edge indicators split between neighbours."""
        return elementize_indicators(self, mesh)

    def row(self, level):
        return {"level": level, "N_dofs": self.n_dofs, "h_max": self.h_max, "t": self.t,
                "h_over_t": self.h_over_t, "err_u": self.err_u, "err_p": self.err_p,
                "err_total_rel": self.err_total_rel, "eta": self.eta,
                "effectivity": self.effectivity}


def elementize_indicators(report, mesh):
    """``eta_K^2 + 1/2 sum eta_E^2`` (boundary edges wholly to their element)."""
    vals = report.eta_K ** 2
    if report.include_oscillation:
        vals = vals + report.osc_K ** 2
    e2 = report.eta_E ** 2
    ee = mesh.edge_elements
    interior = ee[:, 1] >= 0
    share = np.where(interior, 0.5 * e2, e2)
    vals = vals + np.bincount(ee[:, 0], share, minlength=mesh.n_triangles)
    vals = vals + np.bincount(ee[interior, 1], share[interior], minlength=mesh.n_triangles)
    return vals


def estimate(u, p_star, problem, mesh, sigma2=None, nitsche_tags=None, hybrid_m=None,
             include_oscillation=False, allow_raw_pressure=False, n_dofs=None):
    """Residual estimator for a discrete solution.

    Parameters
    ----------
    u : VelocityField
    p_star : PostprocessedPressure
        Raw P0 pressures are refused unless ``allow_raw_pressure`` is set
        (postprocessing ablation).
    hybrid_m : tuple, optional
        ``(edges, m_eval)`` with ``m_eval(edges, pts)`` the weighted
        tangential multiplier ``t * m``; on these edges the velocity-jump
        term becomes ``sum_sides (2 / h_E) ||t u_K,tau - m||^2``.
    """
    from .postprocess import PostprocessedPressure

    if not isinstance(p_star, PostprocessedPressure) and not allow_raw_pressure:
        raise ValueError("estimator needs the postprocessed pressure (pass allow_raw_pressure for ablations)")
    sigma2 = problem.sigma2_on(mesh) if sigma2 is None else sigma2
    t = problem.t
    t2 = t * t
    if nitsche_tags is None:
        nitsche_tags = problem.nitsche_tags
    nitsche_tags = tuple(nitsche_tags) if t > 0 else ()
    uev = u.evaluate
    pev = p_star.evaluate
    nt = mesh.n_triangles
    elems = np.arange(nt)
    h = mesh.diameters

    pts, w = element_points(mesh, elems, QDEG)
    uv, _ = uev(elems, pts)
    lap = u.laplacian(elems, pts)
    _, gp = pev(elems, pts)
    res = -t2 * lap + sigma2[:, None, None] * uv + gp - np.asarray(problem.f(pts), dtype=float)
    eta_K2 = h ** 2 / (sigma2 * h ** 2 + t2) * np.einsum("nqc,nq->n", res ** 2, w)
    gq = np.asarray(problem.g(pts), dtype=float)
    gbar = np.einsum("nq,nq->n", gq, w) / mesh.areas
    osc2 = (t2 + sigma2 * h ** 2) * np.einsum("nq,nq->n", (gq - gbar[:, None]) ** 2, w)

    eta_E2 = np.zeros(mesh.n_edges)
    edges = mesh.interior_edges
    skeleton = np.zeros(0, dtype=np.int64)
    if hybrid_m is not None:
        skeleton, m_eval = hybrid_m
    if len(edges):
        pe, we, _ = edge_points(mesh, edges, EDGE_NPTS)
        n = mesh.normals[edges]
        tau = mesh.tangents[edges]
        he = mesh.edge_lengths[edges]
        wE = pressure_weights(mesh, sigma2, t, edges)
        vl, gl = _side_values(uev, mesh, edges, 0, pe)
        vr, gr = _side_values(uev, mesh, edges, 1, pe)
        ql, _ = _side_values(pev, mesh, edges, 0, pe)
        qr, _ = _side_values(pev, mesh, edges, 1, pe)
        dn = t2 * np.einsum("eqcd,ed->eqc", gl - gr, n)
        jt = np.einsum("eqc,ec->eq", vl - vr, tau)
        vel = t2 / he * np.einsum("eq,eq->e", jt ** 2, we)
        if len(skeleton):
            on_sk = np.isin(edges, skeleton)
            sk = edges[on_sk]
            m = m_eval(sk, pe[on_sk])
            side = np.zeros(len(sk))
            for v in (vl[on_sk], vr[on_sk]):
                d = t * np.einsum("eqc,ec->eq", v, tau[on_sk]) - m
                side += np.einsum("eq,eq->e", d ** 2, we[on_sk])
            vel[on_sk] = 2.0 * side / he[on_sk]
        eta_E2[edges] = (vel + wE * np.einsum("eqc,eq->e", dn ** 2, we)
                         + wE * np.einsum("eq,eq->e", (ql - qr) ** 2, we))
    if t > 0 and nitsche_tags:
        bnd = mesh.edges_with_tag(*nitsche_tags)
        if len(bnd):
            eta_E2[bnd] += t2 * _boundary_tangential_sq(uev, mesh, bnd, problem.u_D)
    for tag, pD in problem.pressure_bc.items():
        bnd = mesh.edges_with_tag(tag)
        if len(bnd) == 0:
            continue
        pe, we, _ = edge_points(mesh, bnd, EDGE_NPTS)
        n = mesh.normals[bnd]
        _, gl = _side_values(uev, mesh, bnd, 0, pe)
        ql, _ = _side_values(pev, mesh, bnd, 0, pe)
        r = t2 * np.einsum("eqcd,ed->eqc", gl, n) - (ql - np.asarray(pD(pe), dtype=float))[..., None] * n[:, None, :]
        eta_E2[bnd] += pressure_weights(mesh, sigma2, t, bnd) * np.einsum("eqc,eq->e", r ** 2, we)

    if n_dofs is None:
        n_dofs = u.dofmap.n_dofs + nt
    report = ErrorReport(eta_K=np.sqrt(eta_K2), eta_E=np.sqrt(eta_E2), osc_K=np.sqrt(osc2),
                         n_dofs=int(n_dofs), t=t, h_max=float(h.max()),
                         include_oscillation=include_oscillation)
    if problem.exact is not None:
        exact_errors(report, u, p_star, problem, mesh, sigma2, nitsche_tags, hybrid_m)
    return report


def exact_errors(report, u, p_star, problem, mesh, sigma2, nitsche_tags=(), hybrid_m=None):
    """Fill the exact-error fields of ``report`` in place.

    The error ``u - u_h`` has zero boundary datum, so boundary jump terms are
    taken against zero.  In the hybrid norm the multiplier error is
    ``u_tau - m / t``.
    """
    ex = problem.exact
    t = problem.t
    uex = vector_evaluator((ex.u, ex.grad_u))
    pex = scalar_evaluator((ex.p, ex.grad_p))
    skeleton_m = None
    if hybrid_m is not None and t > 0:
        sk, m_eval = hybrid_m

        def m_err(edges, pts):
            u_t = np.einsum("eqc,ec->eq", np.asarray(ex.u(pts), dtype=float), mesh.tangents[edges])
            return u_t - m_eval(edges, pts) / t
        skeleton_m = (sk, m_err)
    report.err_u = velocity_norm(difference(uex, u.evaluate), mesh, sigma2, t, nitsche_tags,
                                 skeleton_m=skeleton_m)
    zero = {tag: (lambda x: np.zeros(x.shape[:-1])) for tag in problem.pressure_bc}
    report.err_p = pressure_norm(difference(pex, p_star.evaluate), mesh, sigma2, t, zero)
    report.norm_u = velocity_norm(uex, mesh, sigma2, t)
    report.norm_p = pressure_norm(pex, mesh, sigma2, t)
    return report

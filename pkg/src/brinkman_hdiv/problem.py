"""Problem data for the scaled Brinkman equations.

The model solved everywhere in this package is

    -t^2 lap(u) + sigma^2 u + grad(p) = f,   div(u) = g,

with piecewise constant ``sigma^2 > 0`` and ``t >= 0``.
"""
from dataclasses import dataclass, field
import re
import warnings

import numpy as np

from .mesh import DIRICHLET, INFLOW, OUTFLOW, WALL
from .quadrature import triangle_rule

DARCY = 9.869233e-13  # m^2
MILLIDARCY = 1e-3 * DARCY
FOOT = 0.3048  # m
CENTIPOISE = 1e-3  # Pa s

SPE10_SHAPE = (85, 220, 60)  # layers, raw-y, raw-x (x fastest)
SPE10_CELL_FT = (10.0, 20.0)  # domain-x and domain-y cell sizes


class IngestionError(ValueError):
    pass


@dataclass
class ExactSolution:
    """Callables on points of shape (..., 2)."""
    u: callable
    grad_u: callable
    p: callable
    grad_p: callable = None


def _zero_vector(x):
    return np.zeros(np.shape(x))


def _zero_scalar(x):
    return np.zeros(np.shape(x)[:-1])


@dataclass
class BrinkmanProblem:
    """Parameters, loads and boundary data of one Brinkman problem.

    ``sigma2`` is either a positive number or a callable evaluated at element
    barycentres.  ``normal_tags`` carry the strong condition
    ``u.n = u_D.n``; ``nitsche_tags`` carry the weak tangential condition
    ``u.tau = u_D.tau`` (active only for ``t > 0``); ``pressure_bc`` maps a tag
    to a callable pressure datum entering the natural boundary term.
    """
    t: float
    sigma2: object = 1.0
    f: callable = _zero_vector
    g: callable = _zero_scalar
    u_D: callable = _zero_vector
    normal_tags: tuple = (DIRICHLET, WALL)
    nitsche_tags: tuple = (DIRICHLET, WALL)
    pressure_bc: dict = field(default_factory=dict)
    exact: ExactSolution = None
    name: str = "brinkman"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.t) or self.t < 0:
            raise ValueError("t must be a finite non-negative number")
        clash = set(self.normal_tags) & set(self.pressure_bc)
        if clash:
            raise ValueError(f"tags {sorted(clash)} carry both strong normal and pressure data")
        if not callable(self.sigma2) and not np.all(np.asarray(self.sigma2) > 0):
            raise ValueError("sigma^2 must be strictly positive")

    def sigma2_on(self, mesh):
        """Per-element sigma^2 (sampled at barycentres for callable fields)."""
        if callable(self.sigma2):
            s = np.asarray(self.sigma2(mesh.centroids), dtype=float)
        else:
            s = np.broadcast_to(np.asarray(self.sigma2, dtype=float), (mesh.n_triangles,)).copy()
        if s.shape != (mesh.n_triangles,):
            raise ValueError("sigma^2 field does not match the mesh")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("sigma^2 must be finite and strictly positive on every element")
        return s

    @property
    def active_nitsche_tags(self):
        return tuple(self.nitsche_tags) if self.t > 0 else ()


def sigma_bar_sq(sigma2, mesh, edges=None):
    """Edge average of sigma^2; boundary edges take their single neighbour's value."""
    edges = np.arange(mesh.n_edges) if edges is None else np.asarray(edges)
    ee = mesh.edge_elements[edges]
    left = sigma2[ee[:, 0]]
    right = np.where(ee[:, 1] >= 0, sigma2[np.maximum(ee[:, 1], 0)], left)
    return 0.5 * (left + right)


def sigma_contrast(sigma2, mesh):
    """Largest neighbour ratio of sigma^2 (reported, never enforced)."""
    ee = mesh.edge_elements[mesh.interior_edges]
    r = sigma2[ee[:, 0]] / sigma2[ee[:, 1]]
    return float(np.max(np.maximum(r, 1 / r))) if len(r) else 1.0


# ---------------------------------------------------------------- benchmarks
def _unit_square_mean(func, n=48):
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    return float(np.einsum("i,j,ij->", w, w, func(np.stack([X, Y], axis=-1))))


def analytic_case(beta, t, sigma=1.0):
    """Harmonic-pressure benchmark on the unit square.

    ``p = r^beta sin(beta theta) + C`` with the singular corner at the origin
    and ``C`` fixing zero mean; ``u = grad p`` solves the problem for every
    ``t`` with ``g = 0`` and ``f = (sigma^2 + 1) u``.
    """
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    s2 = float(sigma) ** 2

    def z(x):
        return x[..., 0] + 1j * x[..., 1]

    def p_raw(x):
        return np.imag(z(x) ** beta)

    C = -_unit_square_mean(p_raw)

    def p(x):
        return p_raw(x) + C

    def u(x):
        d = beta * z(x) ** (beta - 1)
        return np.stack([d.imag, d.real], axis=-1)

    def grad_u(x):
        d2 = beta * (beta - 1) * z(x) ** (beta - 2)
        a, b = d2.real, d2.imag
        return np.stack([np.stack([b, a], -1), np.stack([a, -b], -1)], -2)

    def f(x):
        return (s2 + 1.0) * u(x)

    return BrinkmanProblem(
        t=float(t), sigma2=s2, f=f, g=_zero_scalar, u_D=u,
        normal_tags=(DIRICHLET,), nitsche_tags=(DIRICHLET,),
        exact=ExactSolution(u=u, grad_u=grad_u, p=p, grad_p=u),
        name=f"analytic(beta={beta})",
        metadata={"beta": beta, "sigma": sigma, "mean_shift": C,
                  "p_regularity": 1 + beta, "u_regularity": beta},
    )


def channel_profile(t, y):
    """Exact axial velocity of the pressure-driven channel (overflow-safe form)."""
    y = np.asarray(y, dtype=float)
    if t == 0:
        return np.ones_like(y)
    return 1.0 - (np.exp(-y / t) + np.exp(-(1.0 - y) / t)) / (1.0 + np.exp(-1.0 / t))


def channel_profile_dy(t, y):
    y = np.asarray(y, dtype=float)
    if t == 0:
        return np.zeros_like(y)
    return (np.exp(-y / t) - np.exp(-(1.0 - y) / t)) / (t * (1.0 + np.exp(-1.0 / t)))


def channel_tagger(x):
    if x[1] < 1e-12 or x[1] > 1 - 1e-12:
        return WALL
    return INFLOW if x[0] < 0.5 else OUTFLOW


def channel_case(t):
    """Flow in the unit-square channel driven by ``p = -x + 1/2``.

    Walls ``y = 0, 1`` carry ``u.n = 0`` strongly and ``u.tau = 0`` through
    Nitsche terms; the ends carry the pressure data ``+-1/2``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")

    def u(x):
        return np.stack([channel_profile(t, x[..., 1]), np.zeros(x.shape[:-1])], axis=-1)

    def grad_u(x):
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 1] = channel_profile_dy(t, x[..., 1])
        return g

    def p(x):
        return 0.5 - x[..., 0]

    def grad_p(x):
        return np.stack([-np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])], axis=-1)

    return BrinkmanProblem(
        t=float(t), sigma2=1.0, normal_tags=(WALL,), nitsche_tags=(WALL,),
        pressure_bc={INFLOW: lambda x: np.full(x.shape[:-1], 0.5),
                     OUTFLOW: lambda x: np.full(x.shape[:-1], -0.5)},
        exact=ExactSolution(u=u, grad_u=grad_u, p=p, grad_p=grad_p),
        name=f"channel(t={t})",
    )


# -------------------------------------------------------------------- SPE10
@dataclass
class PermRaster:
    """Cell permeabilities (m^2) on a regular raster, row index = y."""
    perm: np.ndarray
    cell_size: tuple
    origin: tuple = (0.0, 0.0)
    note: str = ""

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=float)
        if not np.all(np.isfinite(self.perm)) or np.any(self.perm <= 0):
            raise IngestionError("permeabilities must be finite and positive")

    @property
    def ny(self):
        return self.perm.shape[0]

    @property
    def nx(self):
        return self.perm.shape[1]

    @property
    def extent(self):
        x0, y0 = self.origin
        return (x0, y0), (x0 + self.nx * self.cell_size[0], y0 + self.ny * self.cell_size[1])

    def cell_centres(self):
        x0, y0 = self.origin
        xc = x0 + (np.arange(self.nx) + 0.5) * self.cell_size[0]
        yc = y0 + (np.arange(self.ny) + 0.5) * self.cell_size[1]
        return np.meshgrid(xc, yc)

    def sample(self, points):
        points = np.asarray(points, dtype=float)
        (x0, y0), (x1, y1) = self.extent
        tol = 1e-9 * max(x1 - x0, y1 - y0)
        if (np.any(points[..., 0] < x0 - tol) or np.any(points[..., 0] > x1 + tol)
                or np.any(points[..., 1] < y0 - tol) or np.any(points[..., 1] > y1 + tol)):
            raise ValueError("sample point outside the permeability raster")
        i = np.clip(((points[..., 0] - x0) / self.cell_size[0]).astype(int), 0, self.nx - 1)
        j = np.clip(((points[..., 1] - y0) / self.cell_size[1]).astype(int), 0, self.ny - 1)
        return self.perm[j, i]


def darcy_to_m2(k):
    return np.asarray(k, dtype=float) * DARCY


def m2_to_darcy(k):
    return np.asarray(k, dtype=float) / DARCY


def _token_offset(data, index):
    for n, m in enumerate(re.finditer(rb"\S+", data)):
        if n == index:
            return m.start()
    return len(data)


def streak_mask(raster_ft, kind, angle_deg=15.0):
    """Boolean mask of raster cells overwritten by a streak or crack.

    ``raster_ft`` gives (nx, ny, dx, dy) in feet.  The streak is the
    1100 x 20 ft rectangle centred in x on the raster row just above the
    domain centre line; the crack spans the full x-extent.
    """
    nx, ny, dx, dy = raster_ft
    Lx, Ly = nx * dx, ny * dy
    xc = (np.arange(nx) + 0.5) * dx
    yc = (np.arange(ny) + 0.5) * dy
    X, Y = np.meshgrid(xc, yc)
    y_lo = np.floor(0.5 * Ly / dy) * dy
    y_hi = y_lo + 20.0
    if kind == "streak":
        x_lo, x_hi = 0.5 * Lx - 550.0, 0.5 * Lx + 550.0
        # positive-area overlap with the rectangle
        return ((X + 0.5 * dx > x_lo) & (X - 0.5 * dx < x_hi)
                & (Y + 0.5 * dy > y_lo) & (Y - 0.5 * dy < y_hi))
    if kind == "piercing":
        return (Y + 0.5 * dy > y_lo) & (Y - 0.5 * dy < y_hi)
    if kind == "tilted":
        cx, cy = 0.5 * Lx, 0.5 * (y_lo + y_hi)
        a = np.deg2rad(angle_deg)
        s = (X - cx) * np.cos(a) + (Y - cy) * np.sin(a)
        n = -(X - cx) * np.sin(a) + (Y - cy) * np.cos(a)
        return (np.abs(s) <= 550.0) & (np.abs(n) <= 10.0)
    raise ValueError(f"unknown modification {kind!r}")


MODIFICATION_DARCY = {"streak": 1e6, "tilted": 1e6, "piercing": 1e15}


def load_spe10(path, layer, modification="none", angle_deg=15.0):
    """Read one layer of the SPE10 x-permeability block.

    The file holds whitespace-separated millidarcy values, x fastest, for
    60 x 220 x 85 cells; only the first (kx) block is read.  The returned
    raster has 220 columns of 10 ft along the domain x axis and 60 rows of
    20 ft along y, in metres and m^2.
    """
    nz, nyr, nxr = SPE10_SHAPE
    if not 0 <= layer < nz:
        raise IngestionError(f"layer {layer} outside 0..{nz - 1}")
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = data.split()
    block = nz * nyr * nxr
    if len(tokens) < block:
        raise IngestionError(f"short file: {len(tokens)} values, expected {block} "
                             f"(ends at byte offset {len(data)})")
    start = layer * nyr * nxr
    chunk = tokens[start:start + nyr * nxr]
    try:
        vals = np.array([float(tok) for tok in chunk])
    except ValueError:
        for i, tok in enumerate(chunk):
            try:
                float(tok)
            except ValueError:
                off = _token_offset(data, start + i)
                raise IngestionError(f"non-numeric token {tok[:20]!r} at byte offset {off}") from None
    bad = np.flatnonzero(~np.isfinite(vals) | (vals <= 0))
    if len(bad):
        off = _token_offset(data, start + int(bad[0]))
        raise IngestionError(f"nonpositive permeability {vals[bad[0]]} at byte offset {off}")
    raw = vals.reshape(nyr, nxr)  # [raw_y, raw_x]
    perm_md = raw.T.copy()  # rows: domain y (60), cols: domain x (220)
    note = f"SPE10 kx layer {layer}"
    if modification != "none":
        mask = streak_mask((nyr, nxr, *SPE10_CELL_FT), modification, angle_deg)
        perm_md[mask] = MODIFICATION_DARCY[modification] * 1e3
        note += f", {modification} ({MODIFICATION_DARCY[modification]:g} D)"
    dx, dy = SPE10_CELL_FT
    return PermRaster(perm_md * MILLIDARCY, (dx * FOOT, dy * FOOT), note=note)


def raster_to_sigma2(raster):
    """sigma^2 = 1 / k sampled at element barycentres (m^-2)."""
    def sigma2(points):
        return 1.0 / raster.sample(points)
    return sigma2


def write_synthetic_spe10(path, seed=0, components=1):
    """Write a heterogeneous permeability file in the SPE10 text layout.

    Stand-in data for environments without the public dataset: log-normal
    background with sinuous high-permeability channels, in millidarcy.
    """
    rng = np.random.default_rng(seed)
    nz, nyr, nxr = SPE10_SHAPE
    from scipy.ndimage import gaussian_filter

    out = np.empty((components, nz, nyr, nxr))
    jj, ii = np.meshgrid(np.arange(nyr), np.arange(nxr), indexing="ij")
    for c in range(components):
        for z in range(nz):
            noise = gaussian_filter(rng.standard_normal((nyr, nxr)), sigma=(4, 2))
            noise /= noise.std() + 1e-12
            logk = 0.5 + 1.5 * noise
            for _ in range(3):
                centre = rng.uniform(5, nxr - 5)
                amp = rng.uniform(3, 10)
                period = rng.uniform(60, 160)
                phase = rng.uniform(0, 2 * np.pi)
                path_x = centre + amp * np.sin(2 * np.pi * jj / period + phase)
                width = rng.uniform(1.5, 3.5)
                logk = np.where(np.abs(ii - path_x) < width, 3.0 + 0.5 * noise, logk)
            out[c, z] = 10.0 ** np.clip(logk, -3, 4.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        np.savetxt(path, out.reshape(-1, 6), fmt="%.6g")
    return path


def element_quadrature_mean(func, mesh, degree=10):
    """Area-weighted mean of a scalar function over the mesh."""
    ref, w = triangle_rule(degree)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    pts = v0[:, None, :] + np.einsum("nij,qj->nqi", mesh.jacobians, ref)
    vals = func(pts)
    return float(np.einsum("nq,q,n->", vals, w, mesh.detJ) / mesh.areas.sum())


def spe10_tagger(extent):
    """Tag the left side inflow, the right side outflow and the rest walls."""
    (x0, _), (x1, _) = extent
    tol = 1e-9 * (x1 - x0)

    def tagger(x):
        if x[0] < x0 + tol:
            return INFLOW
        if x[0] > x1 - tol:
            return OUTFLOW
        return WALL
    return tagger


def spe10_case(raster, model="brinkman", inlet_pressure=1.0, viscosity=CENTIPOISE):
    """Pressure-driven flow through a permeability raster.

    Works in reduced pressure ``P = p / mu`` (s^-1) so that ``sigma^2 = 1 / k``
    and ``t = 1`` for the Brinkman model (effective viscosity equal to the
    fluid viscosity) or ``t = 0`` for Darcy.  ``inlet_pressure`` is in Pa on
    the left side, the right side is at zero; top and bottom are no-flow
    walls (and no-slip for ``t > 0``).
    """
    if model not in ("brinkman", "darcy"):
        raise ValueError(f"unknown model {model!r}")
    P_in = float(inlet_pressure) / viscosity
    return BrinkmanProblem(
        t=1.0 if model == "brinkman" else 0.0, sigma2=raster_to_sigma2(raster),
        normal_tags=(WALL,), nitsche_tags=(WALL,),
        pressure_bc={INFLOW: lambda x: np.full(x.shape[:-1], P_in),
                     OUTFLOW: lambda x: np.zeros(x.shape[:-1])},
        name=f"spe10({model})",
        metadata={"raster": raster.note, "inlet_pressure_Pa": inlet_pressure, "viscosity": viscosity},
    )

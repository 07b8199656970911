"""Experiment drivers: convergence studies, ablations, channel flow,
condition numbers and the SPE10 reservoir scenarios.

Every driver is deterministic.  When ``outdir`` is given, tables go to CSV
files, meshes to plain-text exports and the parameters to ``manifest.txt``.
"""
from dataclasses import dataclass, field
import csv
import logging
import math
import os
import time

import numpy as np

from .adapt import THRESHOLD, MarkingStrategy, adapt_loop, solve_level
from .assembly import NitscheConfig
from .hybrid import build_hybrid_system, condense, full_skeleton, make_dd_skeleton, skeleton_condition
from .mesh import build_rect_mesh, build_tensor_mesh
from .problem import (FOOT, analytic_case, channel_case, channel_tagger, load_spe10,
                      spe10_case, spe10_tagger)
from .spaces import FamilyOrder, edge_points

log = logging.getLogger(__name__)

CSV_COLUMNS = ("level", "N_dofs", "h_max", "t", "h_over_t", "err_u", "err_p", "err_total_rel",
               "eta", "effectivity", "rate_err", "rate_eta")
SPE10_THICKNESS_FT = 2.0
SECONDS_PER_DAY = 86400.0


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.10e}"


# ------------------------------------------------------------------- rates
@dataclass
class RateFit:
    pairwise: np.ndarray
    fitted: float


def compute_rates(errors, scale):
    """Pairwise and least-squares rates of ``errors`` against ``scale``.

    ``scale`` is the mesh size ``h`` (uniform refinement) or ``N^(-1/2)``
    (adaptive), so that ``error ~ scale^rate``.  Pairwise rates are
    ``log(e_i / e_{i+1}) / log(s_i / s_{i+1})``.
    """
    e = np.asarray(errors, dtype=float)
    s = np.asarray(scale, dtype=float)
    if len(e) < 2 or len(e) != len(s):
        raise ValueError("need at least two levels of matching errors and scales")
    if np.any(e <= 0) or np.any(s <= 0):
        raise ValueError("errors and scales must be positive")
    pair = np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:])
    slope = np.polyfit(np.log(s), np.log(e), 1)[0]
    return RateFit(pair, float(slope))


@dataclass
class ConvergenceTable:
    """Per-level rows of the estimator CSV schema plus fitted rates."""
    label: str
    mode: str = "uniform"
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, report, level=None):
        self.rows.append(report.row(len(self.rows) if level is None else level))
        self._fill_rates()

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def scale(self):
        if self.mode == "uniform":
            return self.column("h_max")
        return self.column("N_dofs") ** -0.5

    def rate(self, name="err_total_rel"):
        """Least-squares rate of a column (see :func:`compute_rates`)."""
        return compute_rates(self.column(name), self.scale()).fitted

    def pairwise(self, name="err_total_rel"):
        return compute_rates(self.column(name), self.scale()).pairwise

    def _fill_rates(self):
        for r in self.rows:
            r["rate_err"] = r["rate_eta"] = float("nan")
        if len(self.rows) < 2:
            return
        s = self.scale()
        for col, key in (("err_total_rel", "rate_err"), ("eta", "rate_eta")):
            v = self.column(col)
            if np.all(v > 0) and np.all(np.isfinite(v)):
                for i, rate in enumerate(compute_rates(v, s).pairwise, start=1):
                    self.rows[i][key] = float(rate)

    def effectivity_spread(self):
        eff = self.column("effectivity")
        return float(eff.max() / eff.min())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return path


def write_manifest(outdir, params):
    path = os.path.join(outdir, "manifest.txt")
    with open(path, "w") as fh:
        for k in sorted(params):
            fh.write(f"{k} = {params[k]}\n")
    return path


def _prepare(outdir):
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
    return outdir


# -------------------------------------------------------------- convergence
def _hybrid_mode(ablations):
    if ablations.get("dd"):
        return int(ablations["dd"])
    if ablations.get("hybrid"):
        return "full"
    return None


def _ablation_label(ablations):
    parts = []
    if ablations.get("no_postprocess"):
        parts.append("nopp")
    if ablations.get("dd"):
        parts.append(f"dd{int(ablations['dd'])}")
    elif ablations.get("hybrid"):
        parts.append("hybrid")
    return "_".join(parts) or "base"


def run_convergence(family="bdm", beta=3.1, t_list=(1e-6,), sigma=1.0, levels=5, mode="uniform",
                    ablations=None, strategy=None, dof_budget=None, alpha=4.0, start=4, outdir=None):
    """Convergence study on the harmonic-pressure benchmark.

    Uniform mode solves on ``start * 2^i`` square grids, ``i < levels``;
    adaptive mode starts from the ``start`` grid and refines ``levels - 1``
    times (or until ``dof_budget``).  ``ablations`` may hold
    ``no_postprocess``, ``hybrid`` (every interior edge) and ``dd`` (a
    subdomain count).  Returns ``{label: ConvergenceTable}``.
    """
    if mode not in ("uniform", "adaptive"):
        raise ValueError(f"unknown mode {mode!r}")
    if levels < 1:
        raise ValueError("need at least one level")
    ablations = dict(ablations or {})
    space = FamilyOrder(family, 1)
    config = NitscheConfig(alpha=alpha)
    hybrid = _hybrid_mode(ablations)
    post = not ablations.get("no_postprocess", False)
    strategy = strategy or MarkingStrategy(THRESHOLD)
    _prepare(outdir)
    tables = {}
    for t in t_list:
        problem = analytic_case(beta, t, sigma)
        label = f"{family}_beta{beta:g}_t{t:g}_{mode}_{_ablation_label(ablations)}"
        table = ConvergenceTable(label, mode, meta={"t": t, "beta": beta, "family": family})
        t0 = time.perf_counter()
        if mode == "uniform":
            for i in range(levels):
                n = start * 2 ** i
                mesh = build_rect_mesh(n, n)
                *_, report, _, _ = solve_level(problem, mesh, space, config, hybrid, post)
                table.add(report, i)
                if outdir:
                    mesh.export(os.path.join(outdir, f"{label}_mesh{i}.txt"))
        else:
            results = adapt_loop(problem, build_rect_mesh(start, start), space, strategy, config,
                                 max_levels=levels - 1, dof_budget=dof_budget, hybrid=hybrid,
                                 postprocess=post)
            for res in results:
                table.add(res.report, res.level)
                if outdir:
                    res.mesh.export(os.path.join(outdir, f"{label}_mesh{res.level}.txt"))
        table.meta["wall_time"] = time.perf_counter() - t0
        tables[label] = table
        if outdir:
            table.to_csv(os.path.join(outdir, f"{label}.csv"))
    if outdir:
        write_manifest(outdir, {"driver": "converge", "family": family, "beta": beta, "t": list(t_list),
                                "sigma": sigma, "levels": levels, "mode": mode, "alpha": alpha,
                                "ablations": _ablation_label(ablations), "strategy": _strategy_str(strategy),
                                "dof_budget": dof_budget, "start": start, "seeds": "none"})
    return tables


def _strategy_str(s):
    if s.kind == THRESHOLD:
        return f"threshold(theta={s.theta:g}, floor={s.floor:g}%)"
    if s.kind == "top":
        return f"top({s.fraction:g}%)"
    return "staged(" + ",".join(f"{v:g}" for v in s.schedule) + ")"


def rate_minimum_location(tables):
    """``1/(t sqrt(N))`` at the smallest level-wise error rate over several tables.

    Each pairwise rate sits at the geometric mean of its two levels.
    """
    best = (np.inf, np.nan)
    for table in tables:
        x = table.column("h_over_t")
        rates = table.pairwise()
        xm = np.sqrt(x[:-1] * x[1:])
        i = int(np.argmin(rates))
        if rates[i] < best[0]:
            best = (float(rates[i]), float(xm[i]))
    return best[1], best[0]


# ---------------------------------------------------------------- net flow
def net_flow(u, mesh, tag, thickness=1.0):
    """Boundary flux ``thickness * int u.n`` over edges tagged ``tag``.

    Returns ``(flow, flow_ft3_per_day)``; the second value assumes SI input
    (m^3/s) and is only meaningful for physical runs.
    """
    edges = mesh.edges_with_tag(tag)
    if len(edges) == 0:
        raise ValueError(f"no boundary edges tagged {tag!r}")
    pts, w, _ = edge_points(mesh, edges, 2)  # u.n is linear along an edge
    val, _ = u.evaluate(mesh.edge_elements[edges, 0], pts)
    un = np.einsum("eqc,ec->eq", val, mesh.normals[edges])
    flow = float(thickness * np.einsum("eq,eq->", un, w))
    return flow, flow * SECONDS_PER_DAY / FOOT ** 3


# ----------------------------------------------------------------- channel
def near_wall_fraction(results, t, last=3):
    """Share of the elements marked in the final ``last`` refinements lying within ``3 t`` of a wall."""
    marked = [r for r in results if r.marked is not None and len(r.marked)][-last:]
    if not marked:
        return float("nan")
    hits = total = 0
    for r in marked:
        y = r.mesh.centroids[r.marked, 1]
        d = np.minimum(y, 1.0 - y)
        hits += int(np.sum(d <= 3.0 * t))
        total += len(r.marked)
    return hits / total


@dataclass
class ChannelRun:
    t: float
    table: ConvergenceTable
    results: list
    wall_fraction: float


def run_channel(t_list=(0.5, 0.05, 0.005), strategy=None, levels=10, dof_budget=None, family="bdm",
                start=4, alpha=4.0, outdir=None):
    """Adaptive runs of the pressure-driven channel; ``t = 0`` stops after one exact solve."""
    strategy = strategy or MarkingStrategy(THRESHOLD)
    space = FamilyOrder(family, 1)
    config = NitscheConfig(alpha=alpha)
    _prepare(outdir)
    runs = {}
    for t in t_list:
        problem = channel_case(t)
        mesh = build_rect_mesh(start, start).with_tags(channel_tagger)
        label = f"channel_{family}_t{t:g}"
        results = adapt_loop(problem, mesh, space, strategy, config,
                             max_levels=0 if t == 0 else levels - 1, dof_budget=dof_budget)
        table = ConvergenceTable(label, "adaptive", meta={"t": t})
        for res in results:
            table.add(res.report, res.level)
            if outdir:
                res.mesh.export(os.path.join(outdir, f"{label}_mesh{res.level}.txt"))
        runs[t] = ChannelRun(t, table, results, near_wall_fraction(results, t) if t > 0 else float("nan"))
        if outdir:
            table.to_csv(os.path.join(outdir, f"{label}.csv"))
    if outdir:
        write_manifest(outdir, {"driver": "channel", "family": family, "t": list(t_list), "alpha": alpha,
                                "levels": levels, "dof_budget": dof_budget,
                                "strategy": _strategy_str(strategy), "start": start, "seeds": "none"})
    return runs


# ------------------------------------------------------------ conditioning
def run_cond_study(nsub_list=(4, 16, 64), t_list=(0.0, 10.0, 100.0, 1000.0), n=16, family="bdm",
                   beta=3.1, alpha=4.0, outdir=None):
    """Skeleton condition numbers on a fixed ``n x n`` grid.

    The mesh is fixed, so the number of unknowns stays constant across
    ``t``; ``nsub = 0`` hybridises every interior edge.  Returns a list of
    row dicts ``(nsub, t, n_skeleton, lambda_min, lambda_max, kappa)``.
    """
    space = FamilyOrder(family, 1)
    config = NitscheConfig(alpha=alpha)
    mesh = build_rect_mesh(n, n)
    rows = []
    for nsub in nsub_list:
        sk, sub = full_skeleton(mesh) if nsub == 0 else make_dd_skeleton(mesh, nsub)
        for t in t_list:
            hs = build_hybrid_system(analytic_case(beta, t), mesh, space, config, sk, sub, "hybrid")
            S = condense(hs).S
            est = skeleton_condition(S, hs.skeleton_null())
            rows.append({"nsub": nsub, "t": t, "n_skeleton": S.shape[0], "lambda_min": est.lambda_min,
                         "lambda_max": est.lambda_max, "kappa": est.kappa})
    if outdir:
        _prepare(outdir)
        cols = ("nsub", "t", "n_skeleton", "lambda_min", "lambda_max", "kappa")
        with open(os.path.join(outdir, "cond_study.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in cols])
        write_manifest(outdir, {"driver": "cond-study", "nsub": list(nsub_list), "t": list(t_list), "n": n,
                                "family": family, "beta": beta, "alpha": alpha, "seeds": "none"})
    return rows


def loglog_slope(x, y):
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# ------------------------------------------------------------------- SPE10
SPE10_X_BREAKS_FT = np.linspace(0.0, 2200.0, 21)
SPE10_Y_BREAKS_FT = np.array([0.0, 150.0, 300.0, 450.0, 600.0, 620.0, 750.0, 900.0, 1050.0, 1200.0])


def spe10_initial_mesh():
    """Coarse tensor mesh (about 150 ft diameters) whose lines follow the streak row.

    The row ``600 <= y <= 620`` ft and the streak ends ``x = 550, 1650`` ft
    are mesh lines, so barycentre sampling sees the thin features from the
    first level on.
    """
    mesh = build_tensor_mesh(SPE10_X_BREAKS_FT * FOOT, SPE10_Y_BREAKS_FT * FOOT)
    return mesh.with_tags(spe10_tagger(mesh.bounding_box()))


@dataclass
class FlowRateSeries:
    scenario: str
    model: str
    n_dofs: list = field(default_factory=list)
    flow_m3s: list = field(default_factory=list)
    flow_ft3day: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, n_dofs, flow):
        self.n_dofs.append(int(n_dofs))
        self.flow_m3s.append(flow[0])
        self.flow_ft3day.append(flow[1])

    def final_change(self):
        """Relative change of the flow over the final two levels."""
        if len(self.flow_m3s) < 2:
            return float("nan")
        a, b = self.flow_m3s[-2:]
        return abs(b - a) / abs(b)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("level", "N_dofs", "flow_m3_per_s", "flow_ft3_per_day"))
            for i, (n, q, qf) in enumerate(zip(self.n_dofs, self.flow_m3s, self.flow_ft3day)):
                w.writerow((i, n, _fmt(q), _fmt(qf)))
        return path


def regime_ratio(problem, mesh):
    """Per-element ``t / (sigma_K h_K)``; above one the element is in the Stokes regime."""
    return problem.t / (np.sqrt(problem.sigma2_on(mesh)) * mesh.diameters)


@dataclass
class Spe10Run:
    series: FlowRateSeries
    results: list
    regime: np.ndarray
    wall_time: float


def run_spe10(perm_file, layer, scenario="none", model="brinkman", strategy=None, dof_budget=100_000,
              max_levels=None, inlet_pressure=1.0, family="bdm", alpha=4.0, outdir=None):
    """SPE10 layer with an optional streak or crack, refined up to ``dof_budget``.

    Returns :class:`Spe10Run` with the net outflow per level, the per-level
    results and the final regime ratio map.
    """
    strategy = strategy or MarkingStrategy("top", fraction=1.0)
    raster = load_spe10(perm_file, layer, scenario)
    problem = spe10_case(raster, model, inlet_pressure)
    space = FamilyOrder(family, 1)
    config = NitscheConfig(alpha=alpha)
    series = FlowRateSeries(scenario, model)
    thickness = SPE10_THICKNESS_FT * FOOT
    label = f"spe10_layer{layer}_{scenario}_{model}"
    _prepare(outdir)

    def record(res):
        series.append(res.n_dofs, net_flow(res.u, res.mesh, "outflow", thickness))
        if outdir:
            res.mesh.export(os.path.join(outdir, f"{label}_mesh{res.level}.txt"))
        res.u = res.p_star = res.extras = None  # keep memory flat over many levels

    t0 = time.perf_counter()
    results = adapt_loop(problem, spe10_initial_mesh(), space, strategy, config, max_levels=max_levels,
                         dof_budget=dof_budget, callback=record)
    wall = time.perf_counter() - t0
    regime = regime_ratio(problem, results[-1].mesh)
    series.meta.update(wall_time=wall, max_regime_ratio=float(regime.max()))
    if outdir:
        series.to_csv(os.path.join(outdir, f"{label}.csv"))
        np.savetxt(os.path.join(outdir, f"{label}_regime.txt"), regime, fmt="%.10e")
        write_manifest(outdir, {"driver": "spe10", "perm_file": os.path.abspath(perm_file), "layer": layer,
                                "scenario": scenario, "model": model, "t": problem.t,
                                "sigma_source": raster.note, "inlet_pressure_Pa": inlet_pressure,
                                "alpha": alpha, "strategy": _strategy_str(strategy),
                                "dof_budget": dof_budget, "max_levels": max_levels, "seeds": "none"})
    return Spe10Run(series, results, regime, wall)


def crack_elements(mesh):
    """Ids of elements whose barycentre lies in the crack row ``600 < y < 620`` ft."""
    y = mesh.centroids[:, 1] / FOOT
    return np.flatnonzero((y > 600.0) & (y < 620.0))


__all__ = ["ConvergenceTable", "FlowRateSeries", "RateFit", "compute_rates", "run_convergence", "run_channel",
           "run_cond_study", "run_spe10", "net_flow", "near_wall_fraction", "rate_minimum_location",
           "regime_ratio", "spe10_initial_mesh", "loglog_slope", "crack_elements"]

"""Marking strategies and the solve-estimate-mark-refine loop."""
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .assembly import NitscheConfig, assemble_system
from .estimate import elementize_indicators, estimate
from .hybrid import full_skeleton, make_dd_skeleton, solve_hybrid
from .mesh import refine
from .postprocess import piecewise_constant, postprocess_pressure
from .solve import solve_saddle
from .spaces import VelocityField

log = logging.getLogger(__name__)

THRESHOLD = "threshold"
TOP = "top"
STAGED = "staged"
STAGED_SCHEDULE = (15, 15, 15, 10, 10, 10, 5, 5, 5, 2)


@dataclass(frozen=True)
class MarkingStrategy:
    """Element marking rule.

    ``threshold``: mark ``K`` with indicator above ``theta * mean``, starting
    at ``theta = 0.5`` and halving until at least ``floor`` percent are
    marked.  ``top``: the ``fraction`` percent largest indicators.
    ``staged``: ``top`` with the fraction taken from ``schedule`` at the
    current step (the last entry repeats).
    """
    kind: str = THRESHOLD
    fraction: float = 1.0
    theta: float = 0.5
    floor: float = 5.0
    schedule: tuple = STAGED_SCHEDULE

    def __post_init__(self):
        if self.kind not in (THRESHOLD, TOP, STAGED):
            raise ValueError(f"unknown marking strategy {self.kind!r}")
        for pct in (self.fraction, self.floor, *self.schedule):
            if not 0 < pct <= 100:
                raise ValueError("percentages must lie in (0, 100]")
        if not self.schedule:
            raise ValueError("schedule must be nonempty")
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    def fraction_at(self, step):
        if self.kind == STAGED:
            return self.schedule[min(step, len(self.schedule) - 1)]
        return self.fraction


def mark(values, strategy, step=0):
    """Indices of marked elements (sorted ascending)."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        raise ValueError("nothing to mark on an empty mesh")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("indicators must be finite and nonnegative")
    if strategy.kind == THRESHOLD:
        mean = values.mean()
        need = math.ceil(strategy.floor / 100.0 * n)
        theta = strategy.theta
        while True:
            marked = np.flatnonzero(values > theta * mean)
            if len(marked) >= need or theta < 1e-12:
                break
            theta *= 0.5
        if len(marked) < need:  # all-equal or zero indicators
            marked = np.arange(n)
        return marked
    k = max(1, math.ceil(strategy.fraction_at(step) / 100.0 * n))
    order = np.lexsort((np.arange(n), -values))
    return np.sort(order[:k])


@dataclass
class LevelResult:
    level: int
    mesh: object
    u: VelocityField
    p: np.ndarray
    p_star: object
    report: object
    marked: np.ndarray = None
    solver: object = None
    extras: dict = field(default_factory=dict)

    @property
    def n_dofs(self):
        return self.report.n_dofs


def solve_level(problem, mesh, space, config=None, hybrid=None, postprocess=True, tol=1e-10):
    """Solve, postprocess and estimate on one mesh.

    ``hybrid`` is ``None`` (conforming), ``"full"``, ``"lambda"`` (normal
    multiplier only) or an integer subdomain count for domain decomposition.
    """
    config = config or NitscheConfig()
    extras = {}
    hybrid_m = None
    if hybrid is None:
        system = assemble_system(problem, mesh, space, config)
        u, p, _, rep = solve_saddle(system, tol=tol)
        U = VelocityField(system.dofmap, u)
        n_dofs = system.n_u + system.n_p
    else:
        if hybrid == "full":
            sk, sub = full_skeleton(mesh)
            tangential = "hybrid"
        elif hybrid == "lambda":
            sk, sub = full_skeleton(mesh)
            tangential = "nitsche"
        else:
            sk, sub = make_dd_skeleton(mesh, int(hybrid))
            tangential = "hybrid"
        sol = solve_hybrid(problem, mesh, space, config, sk, sub, tangential=tangential, tol=tol)
        U, p, rep = sol.u, sol.p, sol.report
        n_dofs = sol.n_dofs
        if tangential == "hybrid" and problem.t > 0:
            hybrid_m = (sol.system.skeleton, sol.m_evaluator())
        extras["hybrid"] = sol
    sigma2 = problem.sigma2_on(mesh)
    if postprocess:
        ps = postprocess_pressure(U, p, problem, mesh, space, sigma2=sigma2)
        report = estimate(U, ps, problem, mesh, sigma2=sigma2, hybrid_m=hybrid_m, n_dofs=n_dofs)
    else:
        ps = piecewise_constant(mesh, p)
        report = estimate(U, ps, problem, mesh, sigma2=sigma2, hybrid_m=hybrid_m, n_dofs=n_dofs,
                          allow_raw_pressure=True)
    return U, p, ps, report, rep, extras


def adapt_loop(problem, mesh, space, strategy, config=None, max_levels=None, dof_budget=None,
               hybrid=None, postprocess=True, callback=None, tol=1e-10):
    """Iterate solve, estimate, mark and refine.

    Stops after ``max_levels`` refinements or once the dof count reaches
    ``dof_budget`` (the level that reaches it is kept).  ``sigma^2`` is
    re-sampled from the problem data on every new mesh.  Errors are re-raised
    with the level index attached.
    """
    if max_levels is None and dof_budget is None:
        raise ValueError("need max_levels or dof_budget")
    results = []
    level = 0
    while True:
        try:
            U, p, ps, report, rep, extras = solve_level(problem, mesh, space, config, hybrid, postprocess, tol)
        except Exception as exc:
            raise type(exc)(f"level {level}: {exc}") from exc
        res = LevelResult(level, mesh, U, p, ps, report, solver=rep, extras=extras)
        results.append(res)
        log.info("level %d: %d dofs, eta %.3e", level, report.n_dofs, report.eta)
        if callback is not None:
            callback(res)
        if max_levels is not None and level >= max_levels:
            break
        if dof_budget is not None and report.n_dofs >= dof_budget:
            break
        values = np.sqrt(elementize_indicators(report, mesh))
        res.marked = mark(values, strategy, step=level)
        mesh = refine(mesh, res.marked)
        level += 1
    return results

"""Estimator-style wrapper around one solve.

``fit(problem, mesh)`` discretises and solves, ``predict(points)`` evaluates
the discrete velocity and ``predict_pressure(points)`` the postprocessed
pressure.  Hyperparameters follow the scikit-learn conventions so that
``get_params``/``set_params``/``clone`` work.
"""
import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_is_fitted, check_mesh, check_points, check_problem
from .adapt import solve_level
from .assembly import NitscheConfig
from .spaces import FamilyOrder


class BrinkmanSolver(BaseEstimator):
    """Mixed H(div) solver for one Brinkman problem.

    Parameters
    ----------
    family : {"bdm", "rt"}
    alpha : float
        Nitsche penalty.
    hybrid : None, "full", "lambda" or int
        Conforming solve, hybridisation of every interior edge (with or
        without the tangential multiplier) or a subdomain count.
    postprocess : bool
        Build the higher-degree pressure (needed for a meaningful estimator).
    tol : float
        Scaled residual tolerance of the linear solves.
    """

    def __init__(self, family="bdm", alpha=4.0, hybrid=None, postprocess=True, tol=1e-10):
        self.family = family
        self.alpha = alpha
        self.hybrid = hybrid
        self.postprocess = postprocess
        self.tol = tol

    def fit(self, problem, mesh):
        check_problem(problem)
        check_mesh(mesh)
        space = FamilyOrder(self.family, 1)
        u, p, ps, report, solver_report, _ = solve_level(
            problem, mesh, space, NitscheConfig(alpha=self.alpha), self.hybrid, self.postprocess, self.tol)
        self.mesh_ = mesh
        self.problem_ = problem
        self.u_ = u
        self.p_ = p
        self.p_star_ = ps
        self.report_ = report
        self.solver_report_ = solver_report
        self.n_dofs_ = report.n_dofs
        return self

    def _locate(self, points):
        pts = check_points(points)
        elems = self.mesh_.locate(pts)
        if np.any(elems < 0):
            raise ValueError(f"{int(np.sum(elems < 0))} points lie outside the mesh")
        return elems, pts[:, None, :]

    def predict(self, points):
        """Discrete velocity at ``points``, shape ``(n, 2)``."""
        check_is_fitted(self)
        elems, pts = self._locate(points)
        val, _ = self.u_.evaluate(elems, pts)
        return val[:, 0, :]

    def predict_pressure(self, points):
        """Postprocessed (or, without postprocessing, piecewise constant) pressure."""
        check_is_fitted(self)
        elems, pts = self._locate(points)
        val, _ = self.p_star_.evaluate(elems, pts)
        return val[:, 0]

    def score(self, problem=None, mesh=None):
        """Negative global estimator ``-eta`` (higher is better)."""
        check_is_fitted(self)
        return -self.report_.eta

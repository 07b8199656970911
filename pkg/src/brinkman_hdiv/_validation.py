"""Input checks shared by the estimator wrapper and the drivers."""
import numpy as np

from .mesh import Mesh
from .problem import BrinkmanProblem


def check_points(points):
    """Return ``points`` as a finite float array of shape ``(n, 2)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.shape == (2,):
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def check_mesh(mesh):
    if not isinstance(mesh, Mesh):
        raise TypeError(f"expected a Mesh, got {type(mesh).__name__}")
    mesh.check()
    return mesh


def check_problem(problem):
    if not isinstance(problem, BrinkmanProblem):
        raise TypeError(f"expected a BrinkmanProblem, got {type(problem).__name__}")
    return problem


def check_is_fitted(est, attr="u_"):
    if not hasattr(est, attr):
        raise AttributeError(f"{type(est).__name__} is not fitted yet; call fit first")

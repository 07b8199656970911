"""H(div)-conforming mixed finite elements for the Brinkman equation.

BDM1/RT1 velocities with piecewise constant pressures, Nitsche coupling of
the tangential components, elementwise pressure postprocessing, a residual
estimator, hybridisation with static condensation and adaptive refinement.
"""
from .adapt import LevelResult, MarkingStrategy, adapt_loop, mark, solve_level
from .assembly import NitscheConfig, SaddleSystem, assemble_system
from .bench import (ConvergenceTable, FlowRateSeries, compute_rates, net_flow, run_channel, run_cond_study,
                    run_convergence, run_spe10)
from .estimate import ErrorReport, elementize_indicators, estimate, pressure_norm, velocity_norm
from .estimator import BrinkmanSolver
from .hybrid import HybridError, condense, full_skeleton, make_dd_skeleton, solve_hybrid
from .mesh import Mesh, MeshError, build_rect_mesh, build_tensor_mesh, refine, uniform_refine
from .postprocess import PostprocessingError, postprocess_pressure
from .problem import (BrinkmanProblem, IngestionError, analytic_case, channel_case, load_spe10,
                      spe10_case)
from .solve import SolverError, SolverReport, solve_saddle
from .spaces import DofMap, FamilyOrder, OrderNotImplemented, VelocityField

__version__ = "0.1.0"

__all__ = [
    "BrinkmanProblem", "BrinkmanSolver", "ConvergenceTable", "DofMap", "ErrorReport", "FamilyOrder",
    "FlowRateSeries", "HybridError", "IngestionError", "LevelResult", "MarkingStrategy", "Mesh", "MeshError",
    "NitscheConfig", "OrderNotImplemented", "PostprocessingError", "SaddleSystem", "SolverError",
    "SolverReport", "VelocityField", "adapt_loop", "analytic_case", "assemble_system", "build_rect_mesh",
    "build_tensor_mesh", "channel_case", "compute_rates", "condense", "elementize_indicators", "estimate",
    "full_skeleton", "load_spe10", "make_dd_skeleton", "mark", "net_flow", "postprocess_pressure",
    "pressure_norm", "refine", "run_channel", "run_cond_study", "run_convergence", "run_spe10",
    "solve_hybrid", "solve_saddle", "spe10_case", "uniform_refine", "velocity_norm",
]

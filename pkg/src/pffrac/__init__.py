"""Quasi-static phase-field brittle fracture with adaptive mesh refinement.

The package simulates the single-edge-notched shear and tension benchmarks
on hierarchical quadrilateral meshes.  Crack irreversibility is enforced
nodally through a Lagrange multiplier and a semi-smooth Newton method; a
residual-type a posteriori estimator for the phase-field inequality drives
per-time-step mesh adaptivity.
"""

from .material import MaterialParams
from .mesh import Mesh, coarse_mesh, refine, uniform_refine
from .fespace import FeFunction, ScalarSpace, VectorFeFunction
from .system import StepSystem, TimeStepState
from .newton import NewtonConfig, NewtonError, solve_timestep
from .estimator import EstimatorReport, estimate
from .adapt import Horizon, mark, run_adaptive, run_uniform
from .scenarios import ScenarioConfig, preset

__all__ = [
    "MaterialParams", "Mesh", "coarse_mesh", "refine", "uniform_refine",
    "FeFunction", "ScalarSpace", "VectorFeFunction", "StepSystem",
    "TimeStepState", "NewtonConfig", "NewtonError", "solve_timestep",
    "EstimatorReport", "estimate", "Horizon", "mark", "run_adaptive",
    "run_uniform", "ScenarioConfig", "preset",
]

__version__ = "0.1.0"

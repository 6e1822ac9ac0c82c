"""Integrated residual methods with flexible time meshes."""

from .problem import BoundaryValues, DynamicsProblem, validate
from .transcription import (MeshConfig, SolveReport, Trajectory, build, eps_r_of,
                            extract_trajectory, quadrature_error, uniform_mesh)
from .nlp import SolverOptions
from .pipeline import SolveResult, solve_problem, solve_case

__version__ = "0.1.0"

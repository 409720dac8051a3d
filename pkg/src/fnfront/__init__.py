"""Finite-difference solver and audits for singularly perturbed fully nonlinear
parabolic free-boundary problems."""
from .geometry import Cylinder, GridIndexSet, SpaceTimeGrid, lower_cylinder, parabolic_boundary
from .operators import OperatorSpec, discrete_operator_apply, ellipticity_audit, pucci_minus, pucci_plus
from .problem import ForcingSpec, DirichletSpec, ProblemSpec, ReactionProfile, beta_eps, validate_assumptions
from .solver import SolutionField, SolverError, SolverOptions, solve_epsilon_problem
from .regularity import epsilon_sweep, hoelder_time_seminorm, lip_space_seminorm
from .freeboundary import (cylinder_distance, extract_free_boundary, growth_audit, mu0,
                           nondegeneracy_audit, porosity_estimate, predicted_porosity)

__version__ = "0.1.0"

__all__ = [
    "Cylinder", "GridIndexSet", "SpaceTimeGrid", "lower_cylinder", "parabolic_boundary",
    "OperatorSpec", "discrete_operator_apply", "ellipticity_audit", "pucci_minus", "pucci_plus",
    "ForcingSpec", "DirichletSpec", "ProblemSpec", "ReactionProfile", "beta_eps",
    "validate_assumptions", "SolutionField", "SolverError", "SolverOptions",
    "solve_epsilon_problem", "epsilon_sweep", "hoelder_time_seminorm", "lip_space_seminorm",
    "cylinder_distance", "extract_free_boundary", "growth_audit", "mu0", "nondegeneracy_audit",
    "porosity_estimate", "predicted_porosity",
]

"""Open-loop dynamic games with rotating-hyperplane collision avoidance.

Solve for equilibria of multi-satellite games under Hill-Clohessy-Wiltshire
dynamics, differentiate them with respect to the hyperplane parameters, and
recover those parameters from demonstrations.
"""

from hypergames.game import GameSpec, ThetaParams, Trajectory, feasibility_report
from hypergames.hcw import OrbitConstants, hcw_matrices, planar_dynamics, propagate
from hypergames.learning import LearnerOptions, learn_parameters
from hypergames.sensitivity import loss_gradient, solution_sensitivity
from hypergames.solver import SolveOptions, best_response_check, solve_mcp

__all__ = [
    "GameSpec",
    "LearnerOptions",
    "OrbitConstants",
    "SolveOptions",
    "ThetaParams",
    "Trajectory",
    "best_response_check",
    "feasibility_report",
    "hcw_matrices",
    "learn_parameters",
    "loss_gradient",
    "planar_dynamics",
    "propagate",
    "solution_sensitivity",
    "solve_mcp",
]

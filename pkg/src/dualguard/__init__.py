"""Sampling-based MPC with Hamilton-Jacobi safe rollouts and output filtering."""
from .controllers import (METHOD_ORDER, VARIANTS, Controller, CostSpec, MppiParams, mppi_update,
                          plain_rollout, safe_rollout, shield_repair, shield_rollout, stage_cost)
from .dynamics import Bicycle3D, ControlBounds, DoubleIntegrator, Dubins3D, Integrator1D, make_model
from .environment import (Environment, HalfSpace, ObstacleSpec, RaceTrack, Task, generate_environment,
                          oval_track, racetrack_environment)
from .grid import Grid, OutOfDomainError, ScalarField, gradient, interpolate, state_to_cell
from .reachability import (SolverError, SolverParams, ValueField, brt_contains,
                           optimal_safe_control, solve, switching_band, value)
from .safety_filter import FilterDecision, least_restrictive_filter

__version__ = "0.1.0"

__all__ = [
    "METHOD_ORDER", "VARIANTS", "Controller", "CostSpec", "MppiParams", "mppi_update",
    "plain_rollout", "safe_rollout", "shield_repair", "shield_rollout", "stage_cost",
    "Bicycle3D", "ControlBounds", "DoubleIntegrator", "Dubins3D", "Integrator1D", "make_model",
    "Environment", "HalfSpace", "ObstacleSpec", "RaceTrack", "Task", "generate_environment", "oval_track",
    "racetrack_environment", "Grid", "OutOfDomainError", "ScalarField", "gradient",
    "interpolate", "state_to_cell", "SolverError", "SolverParams", "ValueField", "brt_contains",
    "optimal_safe_control", "solve", "switching_band", "value", "FilterDecision",
    "least_restrictive_filter",
]

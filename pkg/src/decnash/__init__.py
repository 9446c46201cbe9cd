"""Decentralized open-loop Nash planning for vehicles on fixed paths."""

from .dynamics import VehicleParams, VehicleState, propagate, state_jacobians, step
from .game import GameSpec, JointPlan, build_game, constraint_residuals, objective
from .idm import IdmParams, idm_accel, idm_step_controls, select_follow
from .interaction_graph import InteractionGraph, ObservationModel, build_graph, scc_decompose
from .nash_solver import NashSolution, SolverConfig, check_equilibrium, solve
from .paths import PathPolynomial, eval_position, eval_tangent, fit_path, heading, straight_path
from .simulation import MetricsReport, Scenario, detect_collisions, run, summarize

__version__ = "0.1.0"

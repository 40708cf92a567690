"""Penalized robust utility maximization in Levy-driven markets."""

from .levy import LevyModel, PathBundle, TimeGrid, build_levy_model, sample_paths, simulate_paths
from .market import MarketSpec, price_paths, validate_assumptions, wealth_paths
from .measure import ControlPair, complete_to_elmm, density_paths, elmm_residual, relative_entropy, tilt_sample
from .penalty import PenaltySpec, evaluate_penalty, make_log_penalty, make_power_penalty
from .solver import (ControlFamily, DualProblem, MonteCarloConfig, dual_objective, solve_dual, solve_primal,
                     weak_duality_audit)
from .steps import StepFunction
from .utility import UtilitySpec, make_custom_utility, make_log_utility, make_power_utility

__version__ = "0.1.0"

__all__ = [
    "LevyModel", "PathBundle", "TimeGrid", "build_levy_model", "sample_paths", "simulate_paths",
    "MarketSpec", "price_paths", "validate_assumptions", "wealth_paths",
    "ControlPair", "complete_to_elmm", "density_paths", "elmm_residual", "relative_entropy", "tilt_sample",
    "PenaltySpec", "evaluate_penalty", "make_log_penalty", "make_power_penalty",
    "ControlFamily", "DualProblem", "MonteCarloConfig", "dual_objective", "solve_dual", "solve_primal",
    "weak_duality_audit", "StepFunction", "UtilitySpec", "make_custom_utility", "make_log_utility",
    "make_power_utility",
]

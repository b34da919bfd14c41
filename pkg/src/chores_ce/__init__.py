"""Competitive equilibria for chores markets via a difference-of-convex
formulation in log prices."""

from .dca import DcaConfig, SolveResult, fit_linear_rate, solve_dca, solve_rounded_dca
from .equilibrium import (
    EquilibriumCandidate,
    VerificationReport,
    epsilon_prime,
    exact_ce_residual,
    extract_equilibrium,
    oracle_ce_small,
    stationarity_residual,
    verify_eps_ce,
)
from .market import GeneratorConfig, MarketInstance, generate_instance, load_instance, save_instance
from .sgr import SgrConfig, solve_sgr

__all__ = [
    "DcaConfig",
    "EquilibriumCandidate",
    "GeneratorConfig",
    "MarketInstance",
    "SgrConfig",
    "SolveResult",
    "VerificationReport",
    "epsilon_prime",
    "exact_ce_residual",
    "extract_equilibrium",
    "fit_linear_rate",
    "generate_instance",
    "load_instance",
    "oracle_ce_small",
    "save_instance",
    "solve_dca",
    "solve_rounded_dca",
    "solve_sgr",
    "stationarity_residual",
    "verify_eps_ce",
]

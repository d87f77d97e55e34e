"""Covariance completion of partially observed linear systems."""

__version__ = "0.1.0"

from ccama.admm_solver import AdmmOptions, solve_admm
from ccama.ama_solver import AmaOptions, SolveResult, solve_ama
from ccama.decomposition import factor_channels, signature
from ccama.problem import CovarianceData, LtiModel, ProblemInstance, gen_msd
from ccama.realization import filter_gain, optimal_gain

__all__ = [
    "AdmmOptions",
    "AmaOptions",
    "CovarianceData",
    "LtiModel",
    "ProblemInstance",
    "SolveResult",
    "factor_channels",
    "filter_gain",
    "gen_msd",
    "optimal_gain",
    "signature",
    "solve_admm",
    "solve_ama",
]

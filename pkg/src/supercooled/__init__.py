"""Supercooled Stefan problem via its McKean-Vlasov formulation.

Particle systems with default cascades, the fixed-point iteration for the
minimal solution, the Stefan temperature field, and convergence studies.
"""
__version__ = "0.1.0"

from .cadlag import StepFunction, TimeGrid, jumps, levy_distance, sup_distance  # noqa: E402
from .mckean import (  # noqa: E402
    FiniteDifference, MonteCarlo, SolverConfig, SubDensity, check_physical_jump, gamma_fd,
    gamma_mc, solve_minimal,
)
from .particle import (  # noqa: E402
    ParticleRun, gamma_N, iterate_gamma_N, resolve_cascade, simulate_minimal,
)
from .randomness import (  # noqa: E402
    Empirical, Exponential, PointMass, StreamKey, Uniform, gaussian_increment, law_mean,
    parse_law, sample_initial,
)

__all__ = [
    "Empirical", "Exponential", "FiniteDifference", "MonteCarlo", "ParticleRun", "PointMass",
    "SolverConfig", "StepFunction", "StreamKey", "SubDensity", "TimeGrid", "Uniform",
    "check_physical_jump", "gamma_N", "gamma_fd", "gamma_mc", "gaussian_increment",
    "iterate_gamma_N", "jumps", "law_mean", "levy_distance", "parse_law", "resolve_cascade",
    "sample_initial", "simulate_minimal", "solve_minimal", "sup_distance",
]

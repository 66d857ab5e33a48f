"""Numerical laboratory for Boussinesq perturbations of planar Couette flow."""

__version__ = "0.1.0"

from .freq import FrequencyGrid, PhysParams, SpectralField, japanese_bracket, lambda_rate, moving_eta, stationary_xi
from .linear import LinearSolution, heat_phase, propagate_omega_linear, propagate_theta_linear
from .solver import FlowState, SolverConfig, run, step

__all__ = [
    "__version__",
    "FrequencyGrid",
    "PhysParams",
    "SpectralField",
    "japanese_bracket",
    "lambda_rate",
    "moving_eta",
    "stationary_xi",
    "LinearSolution",
    "heat_phase",
    "propagate_omega_linear",
    "propagate_theta_linear",
    "FlowState",
    "SolverConfig",
    "run",
    "step",
]

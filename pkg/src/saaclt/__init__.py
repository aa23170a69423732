"""Sample-average approximation for finite-horizon stochastic control.

Grid dynamic programming with exact and sample-average Bellman operators,
backward propagation of the limiting covariance of the scaled SAA error,
a closed-form LQR oracle, and a replicated Monte Carlo harness.
"""
from ._backend import BACKEND
from .errors import ConfigurationError, DomainError, ModelError, NumericalError, SaaCltError
from .model import (
    GridPolicy,
    GridValueFunction,
    NoiseSpec,
    ProblemInstance,
    QuadraticCost,
    StageModel,
    StateGrid,
    UniformNoise,
    build_grid,
    grid_eval,
    terminal_value,
)
from .sampling import SamplePool, SeedPlan, derive_stream, draw_pool, noise_moments

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigurationError",
    "DomainError",
    "GridPolicy",
    "GridValueFunction",
    "ModelError",
    "NoiseSpec",
    "NumericalError",
    "ProblemInstance",
    "QuadraticCost",
    "SaaCltError",
    "SamplePool",
    "SeedPlan",
    "StageModel",
    "StateGrid",
    "UniformNoise",
    "build_grid",
    "derive_stream",
    "draw_pool",
    "grid_eval",
    "noise_moments",
    "terminal_value",
]

"""Slow-fast stochastic systems driven by mixed fractional Brownian motion.

Numerics for: fractional-calculus path operators and Young integration,
exact fBm sampling and its Volterra/Cameron-Martin structure, slow-fast
SDE solvers with Khasminskii averaging, Cameron-Martin energy minimization
for rare-event rate evaluation, and a Monte Carlo experiment harness.
"""

__version__ = "0.1.0"

from .grid import Grid, GridPath
from .errors import (
    BlowUpError,
    DomainError,
    IllConditionedError,
    NonConvergenceError,
    PrecisionError,
    UsageError,
)

__all__ = [
    "Grid",
    "GridPath",
    "DomainError",
    "UsageError",
    "BlowUpError",
    "PrecisionError",
    "IllConditionedError",
    "NonConvergenceError",
    "__version__",
]

"""Exception hierarchy shared across all modules.

The CLI maps these onto exit codes: validation errors -> 1, numerical
blow-up -> 2, non-convergence -> 3.
"""


class SlowFastError(Exception):
    """Base class for all library errors."""


class DomainError(SlowFastError, ValueError):
    """A parameter lies outside its mathematical domain (e.g. alpha >= 1)."""


class UsageError(SlowFastError, ValueError):
    """Structurally invalid call: mismatched grids, dims, or config fields."""


class BlowUpError(SlowFastError, ArithmeticError):
    """A solver produced a non-finite state; carries the first bad node."""

    def __init__(self, message: str, node_index: int):
        super().__init__(f"{message} (first non-finite value at node {node_index})")
        self.node_index = node_index


class StabilityError(SlowFastError, ValueError):
    """Fast sub-stepping too coarse for the requested scale separation."""


class PrecisionError(SlowFastError, ArithmeticError):
    """A Monte Carlo estimate failed its configured stderr threshold."""


class IllConditionedError(SlowFastError, ArithmeticError):
    """Control recovery rejected: singular coefficients, jump-like target,
    or an unacceptably conditioned discretized Volterra system."""


class NonConvergenceError(SlowFastError, RuntimeError):
    """An iterative method exhausted its budget without converging."""

"""Uniform time grids and vector-valued paths sampled on them.

``GridPath`` is the universal path representation: values of a function
at the nodes of a uniform partition of [0, T].  All operators in this
package consume and produce grid paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError


@dataclass(frozen=True)
class Grid:
    """Uniform partition of [0, T] with nodes t_i = i*T/n_steps."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise DomainError(f"horizon must be a positive real, got {self.horizon}")
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def refine(self, factor: int) -> "Grid":
        return Grid(self.horizon, self.n_steps * int(factor))

    def subgrid_steps(self, substeps: int) -> "Grid":
        """Grid with `substeps` sub-cells per cell (same horizon)."""
        return Grid(self.horizon, self.n_steps * int(substeps))


@dataclass(frozen=True)
class GridPath:
    """Values of an R^dim-valued function at the nodes of a grid.

    ``values`` has shape (n_steps + 1, dim) and must be finite everywhere.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n_nodes:
            raise UsageError(
                f"values must have shape (n_nodes, dim) = ({self.grid.n_nodes}, *), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v).all(axis=1))[0][0])
            raise UsageError(f"path values must be finite (first bad node: {bad})")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    def component(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def __add__(self, other: "GridPath") -> "GridPath":
        require_same_grid(self, other)
        return GridPath(self.grid, self.values + other.values)

    def __sub__(self, other: "GridPath") -> "GridPath":
        require_same_grid(self, other)
        return GridPath(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "GridPath":
        return GridPath(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    @staticmethod
    def from_function(grid: Grid, fn, dim: int | None = None) -> "GridPath":
        """Sample a callable t -> scalar or vector at the grid nodes."""
        vals = np.array([np.atleast_1d(fn(t)) for t in grid.nodes], dtype=float)
        if dim is not None and vals.shape[1] != dim:
            raise UsageError(f"function returned dim {vals.shape[1]}, expected {dim}")
        return GridPath(grid, vals)

    @staticmethod
    def zero(grid: Grid, dim: int = 1) -> "GridPath":
        return GridPath(grid, np.zeros((grid.n_nodes, dim)))

    def restrict_to_coarse(self, coarse: Grid) -> "GridPath":
        """Restriction onto a coarser grid whose nodes are a subset of ours."""
        if self.grid.n_steps % coarse.n_steps != 0 or self.grid.horizon != coarse.horizon:
            raise UsageError("coarse grid nodes must be a subset of the fine grid")
        stride = self.grid.n_steps // coarse.n_steps
        return GridPath(coarse, self.values[::stride])


@dataclass(frozen=True)
class HolderExponent:
    """Admissible pair (alpha, hurst) with 1 - hurst < alpha < 1/2."""

    alpha: float
    hurst: float

    def __post_init__(self):
        if not (0.5 < self.hurst < 1.0):
            raise DomainError(f"hurst must lie in (1/2, 1), got {self.hurst}")
        if not (1.0 - self.hurst < self.alpha < 0.5):
            raise DomainError(
                f"alpha must lie in (1-hurst, 1/2) = ({1 - self.hurst}, 0.5), got {self.alpha}"
            )


def require_same_grid(a: GridPath, b: GridPath) -> None:
    if a.grid != b.grid:
        raise UsageError(f"paths live on different grids: {a.grid} vs {b.grid}")


def require_dim(p: GridPath, dim: int, what: str = "path") -> None:
    if p.dim != dim:
        raise UsageError(f"{what} has dim {p.dim}, expected {dim}")

"""Time-stepping solvers for the slow-fast system, its controlled variant,
the frozen-fast dynamics, the averaged ODE, and the deterministic skeleton.

Slow channel: explicit Euler with left-point increments of the rough
driver (pathwise order h^(2H-1) for H > 1/2, matching the regularity the
pathwise theory actually provides).  Fast channel: Euler-Maruyama on a
sub-grid with drift scale 1/delta, stepped while the slow state is frozen
at the left node.

All solvers are pure functions of their inputs; batches share no state,
so trajectory loops parallelize trivially with per-trajectory streams.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError, DomainError, PrecisionError, StabilityError, UsageError
from .fbm import Control, RngStream, cm_increment_matrix
from .grid import Grid, GridPath
from .systems import SystemSpec

__all__ = [
    "ScaleParams",
    "ErgodicParams",
    "AveragedDrift",
    "default_fast_substeps",
    "solve_slow_fast",
    "solve_controlled",
    "solve_frozen_fast",
    "estimate_bar_f1",
    "solve_averaged",
    "solve_skeleton",
]


def default_fast_substeps(grid: Grid, delta: float) -> int:
    """Sub-steps per slow cell so the fast step is min(h, delta/20)."""
    return max(1, int(np.ceil(20.0 * grid.step / delta)))


@dataclass(frozen=True)
class ScaleParams:
    """Scale separation 0 < delta < epsilon <= 1 plus fast sub-stepping."""

    epsilon: float
    delta: float
    fast_substeps: int

    def __post_init__(self):
        if not (0.0 < self.delta < self.epsilon <= 1.0):
            raise DomainError(
                f"need 0 < delta < epsilon <= 1, got delta={self.delta}, epsilon={self.epsilon}"
            )
        if self.fast_substeps < 1:
            raise DomainError("fast_substeps must be a positive integer")

    @staticmethod
    def auto(epsilon: float, delta: float, grid: Grid) -> "ScaleParams":
        return ScaleParams(epsilon, delta, default_fast_substeps(grid, delta))


def _check_substeps(grid: Grid, scales: ScaleParams, strict: bool) -> None:
    h_fast = grid.step / scales.fast_substeps
    if h_fast > scales.delta / 2.0:
        msg = (
            f"fast step {h_fast:.3g} exceeds delta/2 = {scales.delta / 2:.3g}; "
            "explicit Euler on the fast channel may be unstable"
        )
        if strict:
            raise StabilityError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def _first_bad_node(arr: np.ndarray) -> int:
    # arr: (batch, nodes, dim); index of the first node with any non-finite value
    bad = ~np.all(np.isfinite(arr), axis=(0, 2))
    return int(np.argmax(bad))


def _mat_vec(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    # (B, d, k) @ (B, k) -> (B, d);  vec may also be (k,) shared over the batch
    if vec.ndim == 1:
        return mat @ vec
    return np.einsum("bdk,bk->bd", mat, vec)


def _run_slow_fast(
    spec: SystemSpec,
    grid: Grid,
    scales: ScaleParams,
    bh_vals: np.ndarray,
    w_incr: Optional[np.ndarray],
    x0: np.ndarray,
    y0: np.ndarray,
    sqrt_eps: float,
    du_incr: Optional[np.ndarray] = None,  # (n, d1): per-cell increments of u = K_H du
    vprime_sub: Optional[np.ndarray] = None,
    skip_fast: bool = False,
):
    B = bh_vals.shape[0]
    n, h, K = grid.n_steps, grid.step, scales.fast_substeps
    h_fast = h / K
    delta = scales.delta
    ctrl_fast = np.sqrt(delta / scales.epsilon)

    x = np.broadcast_to(x0, (B, spec.dims.m)).astype(float).copy()
    y = np.broadcast_to(y0, (B, spec.dims.n)).astype(float).copy()
    xs = np.empty((B, n + 1, spec.dims.m))
    ys = np.empty((B, n + 1, spec.dims.n))
    xs[:, 0] = x
    ys[:, 0] = y

    for j in range(n):
        # slow increment from left-node values (y still at t_j here)
        drift = spec.f1(x, y) * h
        s1 = spec.sigma1(x)
        if du_incr is not None:
            drift += _mat_vec(s1, du_incr[j])
        x_next = x + drift + sqrt_eps * _mat_vec(s1, bh_vals[:, j + 1] - bh_vals[:, j])

        if not skip_fast:
            for k in range(K):
                idx = j * K + k
                s2 = spec.sigma2(x, y)
                fast_drift = spec.f2(x, y)
                if vprime_sub is not None:
                    fast_drift = fast_drift + ctrl_fast * _mat_vec(s2, vprime_sub[idx])
                y = (
                    y
                    + fast_drift * (h_fast / delta)
                    + _mat_vec(s2, w_incr[:, idx]) / np.sqrt(delta)
                )
            if not np.all(np.isfinite(y)):
                raise BlowUpError("fast component blew up", j + 1)

        x = x_next
        if not np.all(np.isfinite(x)):
            raise BlowUpError("slow component blew up", j + 1)
        xs[:, j + 1] = x
        ys[:, j + 1] = y
    return xs, ys


def _vprime_at_substeps(vprime: GridPath, substeps: int) -> np.ndarray:
    """Linear interpolation of the nodal density at sub-step left endpoints."""
    n = vprime.grid.n_steps
    t_sub = (np.arange(n * substeps) / substeps)  # in units of the slow step
    j = np.floor(t_sub).astype(int)
    frac = (t_sub - j)[:, None]
    v = vprime.values
    return v[j] * (1.0 - frac) + v[j + 1] * frac


def _check_noise(spec: SystemSpec, grid: Grid, scales: ScaleParams, bh: GridPath, w: GridPath):
    if bh.grid != grid:
        raise UsageError("fBm path must live on the slow grid")
    if bh.dim != spec.dims.d1:
        raise UsageError(f"fBm path has dim {bh.dim}, system expects d1={spec.dims.d1}")
    expected = grid.n_steps * scales.fast_substeps
    if w.grid.n_steps != expected or w.grid.horizon != grid.horizon:
        raise UsageError(
            f"Brownian path must live on the fast sub-grid with {expected} steps"
        )
    if w.dim != spec.dims.d2:
        raise UsageError(f"Brownian path has dim {w.dim}, system expects d2={spec.dims.d2}")


def solve_slow_fast(
    spec: SystemSpec,
    scales: ScaleParams,
    bh: GridPath,
    w: GridPath,
    strict: bool = False,
) -> tuple[GridPath, GridPath]:
    """One trajectory of the slow-fast system driven by the supplied noise.

    ``bh`` is the fBm path on the slow grid (scaled inside by sqrt(epsilon));
    ``w`` the Brownian path on the fast sub-grid.  Both components are
    returned at the slow nodes.  Identical inputs give bitwise-identical
    output.
    """
    grid = bh.grid
    _check_noise(spec, grid, scales, bh, w)
    _check_substeps(grid, scales, strict)
    w_incr = np.diff(w.values, axis=0)[None, :, :]
    xs, ys = _run_slow_fast(
        spec, grid, scales, bh.values[None], w_incr,
        spec.x0[None], spec.y0[None], np.sqrt(scales.epsilon),
    )
    return GridPath(grid, xs[0]), GridPath(grid, ys[0])


def solve_controlled(
    spec: SystemSpec,
    scales: ScaleParams,
    ctrl: Control,
    bh: GridPath,
    w: GridPath,
    strict: bool = False,
) -> tuple[GridPath, GridPath]:
    """Controlled slow-fast trajectory.

    The Cameron-Martin shift u = K_H du enters the slow channel through
    left-point Young increments sigma1(x) (u(t_{j+1}) - u(t_j)), the same
    treatment the rough driver gets (the cell increments of u are
    integrated exactly through the Volterra cell averages); the
    Brownian-channel density enters as sqrt(delta/epsilon) sigma2 v' dt in
    the fast drift.  A zero control reproduces ``solve_slow_fast``
    pathwise.
    """
    grid = bh.grid
    _check_noise(spec, grid, scales, bh, w)
    _check_substeps(grid, scales, strict)
    if ctrl.grid != grid:
        raise UsageError("control must be discretized on the slow grid")
    if ctrl.du.dim != spec.dims.d1 or ctrl.vprime.dim != spec.dims.d2:
        raise UsageError("control densities must match the noise dimensions")
    du_incr = cm_increment_matrix(grid, ctrl.hurst) @ ctrl.du.values
    vprime_sub = _vprime_at_substeps(ctrl.vprime, scales.fast_substeps)
    w_incr = np.diff(w.values, axis=0)[None, :, :]
    xs, ys = _run_slow_fast(
        spec, grid, scales, bh.values[None], w_incr,
        spec.x0[None], spec.y0[None], np.sqrt(scales.epsilon),
        du_incr=du_incr, vprime_sub=vprime_sub,
    )
    return GridPath(grid, xs[0]), GridPath(grid, ys[0])


def solve_frozen_fast(
    spec: SystemSpec,
    x_frozen: np.ndarray,
    horizon: float,
    n_steps: int,
    rng: RngStream,
    y0: Optional[np.ndarray] = None,
    w_incr: Optional[np.ndarray] = None,
) -> GridPath:
    """Euler-Maruyama trajectory of the fast channel with the slow state frozen.

    Supplying ``w_incr`` (shape (n_steps, d2)) overrides the stream: two
    runs with the same increments are comparable pathwise.
    """
    grid = Grid(horizon, n_steps)
    h = grid.step
    x = np.atleast_1d(np.asarray(x_frozen, dtype=float))[None, :]
    y = (spec.y0 if y0 is None else np.atleast_1d(np.asarray(y0, dtype=float)))[None, :].copy()
    if w_incr is None:
        w_incr = rng.generator().standard_normal((n_steps, spec.dims.d2)) * np.sqrt(h)
    ys = np.empty((n_steps + 1, spec.dims.n))
    ys[0] = y[0]
    for i in range(n_steps):
        y = y + spec.f2(x, y) * h + _mat_vec(spec.sigma2(x, y), w_incr[i][None])
        if not np.all(np.isfinite(y)):
            raise BlowUpError("frozen fast component blew up", i + 1)
        ys[i + 1] = y[0]
    return GridPath(grid, ys)


@dataclass(frozen=True)
class ErgodicParams:
    """Time-average window and replication for invariant-measure averages."""

    burn_in: float = 2.0
    horizon: float = 10.0
    n_steps: int = 2000
    replicas: int = 8
    stderr_tol: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.burn_in < self.horizon):
            raise DomainError("need 0 <= burn_in < horizon")
        if self.replicas < 1 or self.n_steps < 2:
            raise DomainError("replicas and n_steps must be positive")


def estimate_bar_f1(
    spec: SystemSpec,
    x: np.ndarray,
    params: ErgodicParams,
    rng: RngStream,
) -> tuple[np.ndarray, float]:
    """Ergodic estimate of the averaged slow drift at frozen x.

    Time-averages f1(x, y_t) over (burn_in, horizon] along replica paths of
    the frozen fast dynamics; returns (estimate, stderr across replicas).
    Raises PrecisionError when a configured stderr threshold is exceeded.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    R = params.replicas
    h = params.horizon / params.n_steps
    xb = np.broadcast_to(x, (R, spec.dims.m)).copy()
    y = np.broadcast_to(spec.y0, (R, spec.dims.n)).astype(float).copy()
    sums = np.zeros((R, spec.dims.m))
    count = 0
    gens = [rng.shifted(r).generator() for r in range(R)]
    for i in range(params.n_steps):
        w = np.stack([g.standard_normal(spec.dims.d2) for g in gens]) * np.sqrt(h)
        y = y + spec.f2(xb, y) * h + _mat_vec(spec.sigma2(xb, y), w)
        if not np.all(np.isfinite(y)):
            raise BlowUpError("frozen fast component blew up", i + 1)
        if (i + 1) * h > params.burn_in:
            sums += spec.f1(xb, y)
            count += 1
    means = sums / count
    est = means.mean(axis=0)
    stderr = float(np.linalg.norm(means.std(axis=0, ddof=1) / np.sqrt(R))) if R > 1 else np.inf
    if params.stderr_tol is not None and stderr > params.stderr_tol:
        raise PrecisionError(
            f"ergodic drift estimate stderr {stderr:.3g} exceeds tolerance {params.stderr_tol:.3g}"
        )
    return est, stderr


@dataclass(frozen=True)
class AveragedDrift:
    """Averaged slow drift, either closed form or an ergodic lattice estimate.

    The callable maps (batch, m) -> (batch, m).  Ergodic drifts are built
    in one pass over a lattice and interpolated multilinearly afterwards;
    the cache is immutable once constructed.
    """

    source: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    stderr_max: float = 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)

    @staticmethod
    def closed_form(fn: Callable[[np.ndarray], np.ndarray]) -> "AveragedDrift":
        return AveragedDrift("closed_form", fn)

    @staticmethod
    def from_system(spec: SystemSpec) -> "AveragedDrift":
        if spec.bar_f1 is None:
            raise UsageError(
                f"system {spec.name!r} declares no closed-form averaged drift; "
                "use AveragedDrift.ergodic"
            )
        return AveragedDrift("closed_form", spec.bar_f1)

    @staticmethod
    def ergodic(
        spec: SystemSpec,
        params: ErgodicParams,
        rng: RngStream,
        bounds: tuple[float, float] = (-4.0, 4.0),
        pitch: float = 0.25,
    ) -> "AveragedDrift":
        if spec.dims.m != 1:
            raise UsageError("lattice-interpolated ergodic drift supports m = 1")
        lo, hi = bounds
        n_pts = int(np.floor((hi - lo) / pitch)) + 1
        xs = lo + pitch * np.arange(n_pts)
        vals = np.empty((n_pts, 1))
        worst = 0.0
        for i, xi in enumerate(xs):
            est, se = estimate_bar_f1(spec, np.array([xi]), params, rng.shifted(1000 * i))
            vals[i] = est
            worst = max(worst, se)

        def fn(x: np.ndarray) -> np.ndarray:
            xc = np.clip(x[:, 0], xs[0], xs[-1])
            return np.interp(xc, xs, vals[:, 0])[:, None]

        return AveragedDrift("ergodic_estimate", fn, stderr_max=worst)


def _rk4_step(drift: Callable, x: np.ndarray, h: float) -> np.ndarray:
    k1 = drift(x)
    k2 = drift(x + 0.5 * h * k1)
    k3 = drift(x + 0.5 * h * k2)
    k4 = drift(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def solve_averaged(drift: AveragedDrift, x0: np.ndarray, grid: Grid) -> GridPath:
    """Classic fourth-order one-step integration of the averaged ODE."""
    x = np.atleast_1d(np.asarray(x0, dtype=float))[None, :].copy()
    out = np.empty((grid.n_nodes, x.shape[1]))
    out[0] = x[0]
    h = grid.step
    for i in range(grid.n_steps):
        x = _rk4_step(drift, x, h)
        if not np.all(np.isfinite(x)):
            raise BlowUpError("averaged ODE blew up", i + 1)
        out[i + 1] = x[0]
    return GridPath(grid, out)


def solve_skeleton(
    spec: SystemSpec,
    drift: AveragedDrift,
    ctrl: Control,
    grid: Grid,
    du_incr: Optional[np.ndarray] = None,
) -> GridPath:
    """Deterministic controlled limit: dx = bar_f1(x) dt + sigma1(x) du_t.

    Only the fBm-channel density of the control enters; the Brownian-channel
    density is never read (the limit map is independent of it).  The drift
    advances with the same fourth-order step as ``solve_averaged``; the
    control enters through exact per-cell increments of u = K_H du at the
    left point, so a zero control reproduces the averaged path bitwise.

    ``du_incr`` (shape (n, d1)) overrides the per-cell increments of u when
    the caller has already assembled them.
    """
    if ctrl.grid != grid:
        raise UsageError("control must be discretized on the solver grid")
    if du_incr is None:
        du_incr = cm_increment_matrix(grid, ctrl.hurst) @ ctrl.du.values
    h = grid.step
    x = np.atleast_1d(np.asarray(spec.x0, dtype=float))[None, :].copy()
    out = np.empty((grid.n_nodes, spec.dims.m))
    out[0] = x[0]
    for i in range(grid.n_steps):
        x_drift = _rk4_step(drift, x, h)
        x = x_drift + _mat_vec(spec.sigma1(x), du_incr[i][None])
        if not np.all(np.isfinite(x)):
            raise BlowUpError("skeleton equation blew up", i + 1)
        out[i + 1] = x[0]
    return GridPath(grid, out)

"""Fractional Brownian motion: exact sampling, the Volterra kernel, and
the Cameron-Martin structure of admissible controls.

One kernel implementation serves three consumers: the Volterra sampler,
the map from L^2 densities to Cameron-Martin paths, and the lifted time
derivative of such paths used by the controlled and skeleton dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma, hyp2f1

from .errors import DomainError, PrecisionError, UsageError
from .fraccalc import MaskedPath
from .grid import Grid, GridPath

__all__ = [
    "RngStream",
    "FbmSpec",
    "Control",
    "fbm_covariance",
    "hurst_constant",
    "volterra_kernel",
    "kernel_cell_averages",
    "volterra_covariance_quadrature",
    "cholesky_factor",
    "sample_fbm",
    "sample_fbm_batch",
    "sample_bm_increments",
    "cameron_martin_map",
    "cameron_martin_endpoint_row",
    "cm_increment_matrix",
    "cm_norm_sq",
    "control_time_derivative",
    "control_derivative_matrix",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (master_seed, stream_index) -> generator.

    Streams are keyed, not jumped, so constructing stream k is O(1) and the
    result never depends on how trajectories were partitioned over workers.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if self.stream_index < 0:
            raise DomainError("stream_index must be non-negative")

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.master_seed & _MASK64, self.stream_index & _MASK64], dtype=np.uint64
        )
        return np.random.Generator(np.random.Philox(key=key))

    def shifted(self, offset: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index + offset)


def _check_hurst_open(hurst: float) -> float:
    hurst = float(hurst)
    if not (0.5 < hurst < 1.0):
        raise DomainError(f"hurst must lie strictly inside (1/2, 1), got {hurst}")
    return hurst


@dataclass(frozen=True)
class FbmSpec:
    """What to sample: Hurst index, number of independent coordinates, grid."""

    hurst: float
    dim: int
    grid: Grid
    method: str = "cholesky"

    def __post_init__(self):
        _check_hurst_open(self.hurst)
        if self.dim < 1:
            raise DomainError("dim must be a positive integer")
        if self.method not in ("cholesky", "volterra"):
            raise UsageError(f"unknown sampling method {self.method!r}")


@dataclass(frozen=True)
class Control:
    """Discretized Cameron-Martin element: L^2 densities (du, vprime).

    ``du`` generates the fBm-channel shift through the Volterra map at the
    given Hurst index; ``vprime`` is the plain time derivative of the
    Brownian-channel shift.  The squared norm is the sum of the two L^2
    norms of the densities.
    """

    grid: Grid
    du: GridPath
    vprime: GridPath
    hurst: float

    def __post_init__(self):
        _check_hurst_open(self.hurst)
        if self.du.grid != self.grid or self.vprime.grid != self.grid:
            raise UsageError("control densities must live on the control grid")

    @staticmethod
    def zero(grid: Grid, d1: int, d2: int, hurst: float) -> "Control":
        return Control(grid, GridPath.zero(grid, d1), GridPath.zero(grid, d2), hurst)

    def energy(self) -> float:
        """Half squared Cameron-Martin norm (the rate-function integrand)."""
        return 0.5 * cm_norm_sq(self)

    def in_ball(self, bound: float) -> bool:
        return self.energy() <= bound + 1e-12


def fbm_covariance(s, t, hurst: float):
    """Covariance of one fBm coordinate: (t^2H + s^2H - |t-s|^2H) / 2."""
    hurst = float(hurst)
    if not (0.0 < hurst < 1.0):
        raise DomainError(f"hurst must lie in (0, 1), got {hurst}")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    out = 0.5 * (
        np.abs(t) ** (2 * hurst) + np.abs(s) ** (2 * hurst) - np.abs(t - s) ** (2 * hurst)
    )
    return out if out.ndim else float(out)


def hurst_constant(hurst: float) -> float:
    """Normalization c_H of the Volterra kernel."""
    return float(
        np.sqrt(
            2.0 * hurst * gamma(1.5 - hurst) * gamma(hurst + 0.5) / gamma(2.0 - 2.0 * hurst)
        )
    )


def volterra_kernel(t, s, hurst: float):
    """Volterra kernel K_H(t, s); zero for s > t, singular like s^(1/2-H) at 0.

    The Gauss hypergeometric factor is evaluated after the linear argument
    transformation that maps 1 - t/s in (-inf, 0] to 1 - s/t in [0, 1),
    keeping the series argument inside the unit disk for all 0 < s <= t.
    """
    hurst = _check_hurst_open(hurst)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0.0):
        raise DomainError("kernel requires s > 0 (singular at s = 0)")
    t_b, s_b = np.broadcast_arrays(t, s)
    out = np.zeros(t_b.shape)
    live = s_b < t_b
    if np.any(live):
        tl, sl = t_b[live], s_b[live]
        w = 1.0 - sl / tl
        pref = hurst_constant(hurst) / gamma(hurst + 0.5)
        out[live] = (
            pref
            * (tl - sl) ** (hurst - 0.5)
            * (tl / sl) ** (0.5 - hurst)
            * hyp2f1(hurst - 0.5, 2.0 * hurst, hurst + 0.5, w)
        )
    return out if out.ndim else float(out)


def _phi(t, r, hurst: float):
    """K_H(t, r) * r^(H-1/2): the factor smooth at r = 0."""
    t_b, r_b = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    out = np.empty(t_b.shape)
    at_zero = r_b == 0.0
    lim = hurst_constant(hurst) / (gamma(hurst - 0.5) * (2.0 * hurst - 1.0))
    out[at_zero] = lim * t_b[at_zero] ** (2.0 * hurst - 1.0)
    if np.any(~at_zero):
        out[~at_zero] = (
            volterra_kernel(t_b[~at_zero], r_b[~at_zero], hurst)
            * r_b[~at_zero] ** (hurst - 0.5)
        )
    return out


def _psi(s, r, hurst: float):
    """K_H(s, r) * (s - r)^(1/2-H): the factor smooth at r = s."""
    s_b, r_b = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(r, dtype=float))
    out = np.empty(s_b.shape)
    at_diag = r_b == s_b
    out[at_diag] = hurst_constant(hurst) / gamma(hurst + 0.5)
    if np.any(~at_diag):
        out[~at_diag] = (
            volterra_kernel(s_b[~at_diag], r_b[~at_diag], hurst)
            * (s_b[~at_diag] - r_b[~at_diag]) ** (0.5 - hurst)
        )
    return out


def _cells_left_array(edges, beta, cof):
    """Per-cell int cof_linear(r) r^beta dr (edges[0] may be 0)."""
    e0, e1 = edges[:-1], edges[1:]
    M0 = (e1 ** (beta + 1.0) - e0 ** (beta + 1.0)) / (beta + 1.0)
    M1 = (e1 ** (beta + 2.0) - e0 ** (beta + 2.0)) / (beta + 2.0) - e0 * M0
    sl = np.diff(cof) / np.diff(edges)
    return cof[:-1] * M0 + sl * M1


def _cells_right_array(edges, m, beta, cof):
    """Per-cell int cof_linear(r) (m - r)^beta dr (edges[-1] may be m)."""
    e0, e1 = edges[:-1], edges[1:]
    M0 = ((m - e0) ** (beta + 1.0) - (m - e1) ** (beta + 1.0)) / (beta + 1.0)
    M1 = (m - e0) * M0 - ((m - e0) ** (beta + 2.0) - (m - e1) ** (beta + 2.0)) / (beta + 2.0)
    sl = np.diff(cof) / np.diff(edges)
    return cof[:-1] * M0 + sl * M1


def volterra_covariance_quadrature(s: float, t: float, hurst: float, n: int = 1024) -> float:
    """int_0^(s^t) K_H(t,r) K_H(s,r) dr by singularity-split product integration.

    The integrand behaves like r^(1-2H) at r = 0 and like (min(s,t)-r)^(H-1/2)
    at the upper end (or (t-r)^(2H-1) when s = t); each half of [0, min(s,t)]
    is integrated against the exact moments of its singular weight with the
    smooth cofactor linearized per cell.
    """
    hurst = _check_hurst_open(hurst)
    if s <= 0 or t <= 0:
        raise DomainError("s and t must be positive")
    m = min(s, t)
    edges = np.linspace(0.0, m, n + 1)
    half = n // 2
    left_cof = _phi(max(s, t), edges[: half + 1], hurst) * _phi(m, edges[: half + 1], hurst)
    left = np.sum(_cells_left_array(edges[: half + 1], 1.0 - 2.0 * hurst, left_cof))
    re = edges[half:]
    if s == t:
        right_cof = _psi(m, re, hurst) ** 2
        right = np.sum(_cells_right_array(re, m, 2.0 * hurst - 1.0, right_cof))
    else:
        right_cof = volterra_kernel(max(s, t), re, hurst) * _psi(m, re, hurst)
        right = np.sum(_cells_right_array(re, m, hurst - 0.5, right_cof))
    return float(left + right)


@lru_cache(maxsize=32)
def _cell_average_matrix(horizon: float, n_steps: int, hurst: float) -> np.ndarray:
    """A[i, j] = int over cell j of K_H(t_i, s) ds; zero for j >= i.

    Built once per (grid, hurst) and treated as immutable afterwards.
    Each row splits [0, t_i] in half: exact s^(1/2-H) moments near 0 with
    the smooth factor linearized, exact (t_i-s)^(H-1/2) moments near the
    diagonal likewise.
    """
    grid = Grid(horizon, n_steps)
    tt = grid.nodes
    A = np.zeros((n_steps + 1, n_steps))
    for i in range(1, n_steps + 1):
        ti = tt[i]
        if i == 1:
            # single cell carries both singularities: exact Beta moments
            a, b = hurst - 0.5, 1.5 - hurst
            rho0 = _phi(ti, np.array([0.0]), hurst)[0] * ti ** (0.5 - hurst)
            rho1 = _psi(ti, np.array([ti]), hurst)[0] * ti ** (hurst - 0.5)
            M0 = ti * beta_fn(b, a + 1.0)
            M1 = ti**2 * beta_fn(b + 1.0, a + 1.0)
            A[1, 0] = rho0 * M0 + (rho1 - rho0) / ti * M1
            continue
        half = i // 2
        le = tt[: half + 1]
        A[i, :half] = _cells_left_array(le, 0.5 - hurst, _phi(ti, le, hurst))
        re = tt[half : i + 1]
        A[i, half:i] = _cells_right_array(re, ti, hurst - 0.5, _psi(ti, re, hurst))
    return A


def kernel_cell_averages(grid: Grid, hurst: float) -> np.ndarray:
    """Cached cell-integrated Volterra kernel (read-only view)."""
    hurst = _check_hurst_open(hurst)
    A = _cell_average_matrix(grid.horizon, grid.n_steps, hurst)
    A.setflags(write=False)
    return A


@lru_cache(maxsize=32)
def _cholesky_factor(horizon: float, n_steps: int, hurst: float) -> np.ndarray:
    grid = Grid(horizon, n_steps)
    tt = grid.nodes[1:]
    C = fbm_covariance(tt[:, None], tt[None, :], hurst)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:  # valid H gives PD covariance
        raise PrecisionError(
            f"fBm covariance factorization failed (H={hurst}, n={n_steps}): {exc}"
        ) from exc
    L.setflags(write=False)
    return L


def cholesky_factor(grid: Grid, hurst: float) -> np.ndarray:
    """Cached Cholesky factor of the node covariance (t_1..t_n), read-only."""
    hurst = _check_hurst_open(hurst)
    return _cholesky_factor(grid.horizon, grid.n_steps, hurst)


@lru_cache(maxsize=32)
def _sampler_weight_matrix(horizon: float, n_steps: int, hurst: float) -> np.ndarray:
    """Volterra sampler weights: B_i = sum_j W[i, j] dW_j.

    Plain cell averages of the kernel underestimate the kernel's L^2 mass
    on cells where it is steep (the s^(1/2-H) cusp at zero and the
    (t-s)^(H-1/2) vanishing at the diagonal), which deflates the sampled
    variance at high H.  Those two cells per row carry root-mean-square
    weights instead (exact second moments; the kernel profiles there are
    near-proportional across rows, so cross-covariances stay accurate).
    """
    grid = Grid(horizon, n_steps)
    h = grid.step
    tt = grid.nodes
    W = _cell_average_matrix(horizon, n_steps, hurst).copy() / h
    for i in range(1, n_steps + 1):
        ti = tt[i]
        if i == 1:
            # single cell: the covariance identity pins its mass exactly
            W[1, 0] = np.sqrt(ti ** (2.0 * hurst) / h)
            continue
        # first cell: weight s^(1-2H), squared smooth factor linearized
        beta = 1.0 - 2.0 * hurst
        cof = _phi(ti, np.array([0.0, h]), hurst) ** 2
        m0 = h ** (beta + 1.0) / (beta + 1.0)
        m1 = h ** (beta + 2.0) / (beta + 2.0)
        sq = cof[0] * m0 + (cof[1] - cof[0]) / h * m1
        W[i, 0] = np.sqrt(sq / h)
        # diagonal cell: weight (t_i-s)^(2H-1), squared smooth factor linearized
        beta = 2.0 * hurst - 1.0
        edges = np.array([ti - h, ti])
        cof = _psi(ti, edges, hurst) ** 2
        m0 = h ** (beta + 1.0) / (beta + 1.0)
        m1 = h * m0 - h ** (beta + 2.0) / (beta + 2.0)
        sq = cof[0] * m0 + (cof[1] - cof[0]) / h * m1
        W[i, i - 1] = np.sqrt(sq / h)
    W.setflags(write=False)
    return W


def sample_fbm(spec: FbmSpec, rng: RngStream) -> GridPath:
    """One fBm path per coordinate, exactly zero at t = 0.

    ``cholesky`` factors the node covariance once (exact law on the grid);
    ``volterra`` pushes i.i.d. Brownian increments through the discretized
    kernel, sharing its weights with the Cameron-Martin machinery.
    """
    gen = rng.generator()
    n = spec.grid.n_steps
    z = gen.standard_normal((n, spec.dim))
    vals = np.zeros((n + 1, spec.dim))
    if spec.method == "cholesky":
        L = _cholesky_factor(spec.grid.horizon, n, spec.hurst)
        vals[1:] = L @ z
    else:
        W = _sampler_weight_matrix(spec.grid.horizon, n, spec.hurst)
        vals[1:] = W[1:] @ (z * np.sqrt(spec.grid.step))
    return GridPath(spec.grid, vals)


def sample_fbm_batch(spec: FbmSpec, base: RngStream, n_paths: int) -> np.ndarray:
    """Stack of independent samples, path k drawn from stream base+k.

    Returns shape (n_paths, n_nodes, dim).  Per-path streams keep results
    independent of any batching or worker layout.
    """
    n = spec.grid.n_steps
    out = np.zeros((n_paths, n + 1, spec.dim))
    if spec.method == "cholesky":
        M = _cholesky_factor(spec.grid.horizon, n, spec.hurst)
        scale = 1.0
    else:
        M = _sampler_weight_matrix(spec.grid.horizon, n, spec.hurst)[1:]
        scale = np.sqrt(spec.grid.step)
    # per-path matmul keeps each path bitwise identical to sample_fbm
    for k in range(n_paths):
        z = base.shifted(k).generator().standard_normal((n, spec.dim))
        out[k, 1:, :] = M @ (z * scale)
    return out


def sample_bm_increments(grid: Grid, dim: int, rng: RngStream) -> np.ndarray:
    """Brownian increments over the grid cells, shape (n_steps, dim)."""
    gen = rng.generator()
    return gen.standard_normal((grid.n_steps, dim)) * np.sqrt(grid.step)


def cameron_martin_map(du: GridPath, hurst: float) -> GridPath:
    """Image of the density du under the Volterra map: u(t) = int K_H(t,s) du(s) ds."""
    hurst = _check_hurst_open(hurst)
    A = kernel_cell_averages(du.grid, hurst)
    mids = 0.5 * (du.values[:-1] + du.values[1:])
    return GridPath(du.grid, A @ mids)


def cameron_martin_endpoint_row(grid: Grid, hurst: float) -> np.ndarray:
    """Row vector r with u(T) = r . du_nodes for nodal densities du."""
    A = kernel_cell_averages(grid, hurst)
    last = A[-1]
    row = np.zeros(grid.n_nodes)
    row[:-1] += 0.5 * last
    row[1:] += 0.5 * last
    return row


@lru_cache(maxsize=32)
def _increment_matrix(horizon: float, n_steps: int, hurst: float) -> np.ndarray:
    A = _cell_average_matrix(horizon, n_steps, hurst)
    D = np.diff(A, axis=0)  # (n, n) rows: u(t_{i+1}) - u(t_i) against cell mids
    U = np.zeros((n_steps, n_steps + 1))
    U[:, :-1] += 0.5 * D
    U[:, 1:] += 0.5 * D
    U.setflags(write=False)
    return U


def cm_increment_matrix(grid: Grid, hurst: float) -> np.ndarray:
    """U with (U du_nodes)_i = u(t_{i+1}) - u(t_i) for the path u = K_H du.

    These exact per-cell increments drive the control term of the
    controlled and skeleton dynamics (left-point Young increments, the
    same treatment the rough driver gets).
    """
    hurst = _check_hurst_open(hurst)
    return _increment_matrix(grid.horizon, grid.n_steps, hurst)


def cm_norm_sq(control: Control) -> float:
    """Squared Cameron-Martin norm: L^2 norms of du and vprime (trapezoid)."""
    h = control.grid.step
    du2 = np.sum(control.du.values**2, axis=1)
    vp2 = np.sum(control.vprime.values**2, axis=1)
    return float(np.trapezoid(du2, dx=h) + np.trapezoid(vp2, dx=h))


@lru_cache(maxsize=32)
def _derivative_matrix(horizon: float, n_steps: int, hurst: float) -> np.ndarray:
    """W mapping nodal du to u'(t_i), i = 1..n (row i-1).

    u'(t) = c_H t^(H-1/2)/Gamma(H-1/2) int_0^t (t-s)^(H-3/2) s^(1/2-H) du(s) ds;
    both endpoint singularities are integrated exactly against piecewise-
    linear du (Beta moments on the first cell, power moments elsewhere).
    """
    grid = Grid(horizon, n_steps)
    h = grid.step
    tt = grid.nodes
    a = hurst - 0.5
    cpre = hurst_constant(hurst) / gamma(a)
    W = np.zeros((n_steps, n_steps + 1))

    # first row: single cell [0, t_1], exact Beta moments
    M0 = beta_fn(a, 1.5 - hurst)
    M2 = beta_fn(a, 2.5 - hurst)
    W[0, 0] = (M0 - M2) * cpre * tt[1] ** a
    W[0, 1] = M2 * cpre * tt[1] ** a

    lag = np.arange(1, n_steps + 1, dtype=float)
    # moments of (t_i - s)^(H-3/2) on the cell at each lag
    W0 = h**a * (lag**a - (lag - 1.0) ** a) / a
    W1 = lag * h * W0 - h ** (a + 1.0) * (
        lag ** (a + 1.0) - (lag - 1.0) ** (a + 1.0)
    ) / (a + 1.0)
    sfac = np.zeros(n_steps + 1)
    sfac[1:] = tt[1:] ** (0.5 - hurst)
    m0_first = h ** (1.5 - hurst) / (1.5 - hurst)
    m1_first = h ** (2.5 - hurst) / (2.5 - hurst)
    for i in range(2, n_steps + 1):
        ti = tt[i]
        row = W[i - 1]
        # cell 0: weight s^(1/2-H), cofactor (t_i - s)^(H-3/2) du
        row[0] += ti ** (a - 1.0) * (m0_first - m1_first / h)
        row[1] += (ti - h) ** (a - 1.0) * (m1_first / h)
        # cells 1..i-1: weight (t_i - s)^(H-3/2), cofactor s^(1/2-H) du
        j = np.arange(1, i)
        ell = i - j
        row[j] += sfac[j] * (W0[ell - 1] - W1[ell - 1] / h)
        row[j + 1] += sfac[j + 1] * (W1[ell - 1] / h)
        row *= cpre * ti**a
    W.setflags(write=False)
    return W


def control_derivative_matrix(grid: Grid, hurst: float) -> np.ndarray:
    """Cached lower-triangular discretized Volterra operator du -> u'."""
    hurst = _check_hurst_open(hurst)
    return _derivative_matrix(grid.horizon, grid.n_steps, hurst)


def control_time_derivative(du: GridPath, hurst: float) -> MaskedPath:
    """Time derivative of the Cameron-Martin path generated by du.

    Defined on (0, T]; the node t = 0 is reported masked (the formula's
    prefactor vanishes there for bounded densities).
    """
    W = control_derivative_matrix(du.grid, hurst)
    vals = np.full((du.grid.n_nodes, du.dim), np.nan)
    vals[1:] = W @ du.values
    mask = np.ones(du.grid.n_nodes, dtype=bool)
    mask[0] = False
    return MaskedPath(du.grid, vals, mask)

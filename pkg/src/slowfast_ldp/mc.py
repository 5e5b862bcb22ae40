"""Monte Carlo experiment harness: rare-event probability estimation,
averaging-principle convergence studies, and LDP consistency checks.

Plain Monte Carlo throughout (importance sampling via the minimizing
control is an acknowledged extension, not built).  Trajectories draw from
per-trajectory counter-based streams and reductions are pure counts and
sums, so reports are bitwise independent of batch layout and worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .errors import DomainError, UsageError
from .fbm import RngStream, cholesky_factor
from .fraccalc import holder_seminorm
from .grid import Grid, GridPath
from .ldp import EnterSet, RateProblem, rate_lower_envelope
from .multiscale import AveragedDrift, ScaleParams, _run_slow_fast, default_fast_substeps, solve_averaged
from .systems import get_system

__all__ = [
    "EndpointExceeds",
    "SupNormExceeds",
    "DeltaRule",
    "ExperimentPlan",
    "EpsilonEstimate",
    "EstimateReport",
    "AveragingRow",
    "AveragingReport",
    "ConsistencyReport",
    "estimate_probability",
    "run_rare_event",
    "run_averaging_study",
    "run_ldp_consistency",
]

# trajectory indices occupy the low bits of the stream index; epsilon levels
# the high bits, so streams never collide across levels
_LEVEL_STRIDE = 1 << 40


@dataclass(frozen=True)
class EndpointExceeds:
    """Event: direction . x_T >= threshold."""

    direction: np.ndarray
    threshold: float

    def __post_init__(self):
        object.__setattr__(
            self, "direction", np.atleast_1d(np.asarray(self.direction, dtype=float))
        )

    def hit(self, xs: np.ndarray) -> np.ndarray:
        return xs[:, -1, :] @ self.direction >= self.threshold

    def as_halfspace(self) -> EnterSet:
        return EnterSet(self.direction, self.threshold)


@dataclass(frozen=True)
class SupNormExceeds:
    """Event: sup over nodes of |x_t| >= radius."""

    radius: float

    def hit(self, xs: np.ndarray) -> np.ndarray:
        return np.max(np.linalg.norm(xs, axis=2), axis=1) >= self.radius


Event = Union[EndpointExceeds, SupNormExceeds]


@dataclass(frozen=True)
class DeltaRule:
    """delta = coeff * epsilon^exponent (default: delta = epsilon^2)."""

    exponent: float = 2.0
    coeff: float = 1.0

    def __call__(self, eps: float) -> float:
        return self.coeff * eps**self.exponent


@dataclass(frozen=True)
class ExperimentPlan:
    system: str
    event: Event
    epsilon_schedule: tuple[float, ...]
    n_samples: tuple[int, ...]
    master_seed: int
    horizon: float = 1.0
    n_steps: int = 128
    hurst: float = 0.7
    delta_rule: DeltaRule = field(default_factory=DeltaRule)
    n_workers: int = 1
    batch_size: int = 4096

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilon_schedule)
        if not eps or any(not (0.0 < e <= 1.0) for e in eps):
            raise DomainError("epsilon schedule must be non-empty inside (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise DomainError("epsilon schedule must be strictly decreasing")
        ns = tuple(int(k) for k in self.n_samples)
        if len(ns) == 1:
            ns = ns * len(eps)
        if len(ns) != len(eps) or any(k < 1 for k in ns):
            raise DomainError("n_samples must match the epsilon schedule")
        deltas = [self.delta_rule(e) for e in eps]
        if any(not (0.0 < d < e) for d, e in zip(deltas, eps)):
            raise DomainError("delta rule must give 0 < delta < epsilon on the schedule")
        ratios = [d / e for d, e in zip(deltas, eps)]
        if any(r2 > r1 + 1e-12 for r1, r2 in zip(ratios, ratios[1:])):
            raise DomainError("delta/epsilon must be non-increasing along the schedule")
        # scale-separation hypothesis of the fast moment bound: delta/epsilon
        # must stay below (beta2/2)^2 for the declared mean-reversion rate
        beta2 = get_system(self.system).constants.beta2
        cap = (beta2 / 2.0) ** 2
        if any(r > cap + 1e-12 for r in ratios):
            raise DomainError(
                f"delta/epsilon exceeds (beta2/2)^2 = {cap:.4g} on the schedule "
                f"(system {self.system!r} declares beta2 = {beta2})"
            )
        object.__setattr__(self, "epsilon_schedule", eps)
        object.__setattr__(self, "n_samples", ns)

    def grid(self) -> Grid:
        return Grid(self.horizon, self.n_steps)


@dataclass(frozen=True)
class EpsilonEstimate:
    epsilon: float
    delta: float
    n_samples: int
    n_hits: int
    p_hat: float
    stderr: float
    eps_log_p: Optional[float]  # masked (None) when no hits occurred
    runtime_s: float = 0.0


@dataclass(frozen=True)
class EstimateReport:
    rows: tuple[EpsilonEstimate, ...]
    rate_reference: Optional[float] = None

    def to_json_dict(self, include_timings: bool = False) -> dict:
        rows = []
        for r in self.rows:
            row = {
                "epsilon": r.epsilon,
                "delta": r.delta,
                "n_samples": r.n_samples,
                "n_hits": r.n_hits,
                "p_hat": r.p_hat,
                "stderr": r.stderr,
                "eps_log_p": r.eps_log_p,
            }
            if include_timings:
                row["runtime_s"] = r.runtime_s
            rows.append(row)
        out = {"per_epsilon": rows}
        if self.rate_reference is not None:
            out["rate_reference"] = self.rate_reference
        return out

    def csv_header(self) -> list[str]:
        return ["epsilon", "delta", "n_samples", "n_hits", "p_hat", "stderr", "eps_log_p"]

    def csv_rows(self) -> list[list]:
        return [
            [r.epsilon, r.delta, r.n_samples, r.n_hits, r.p_hat, r.stderr,
             "" if r.eps_log_p is None else r.eps_log_p]
            for r in self.rows
        ]


def estimate_probability(n_hits: int, n_samples: int) -> tuple[float, float]:
    """Bernoulli point estimate and its standard error."""
    if n_samples < 1 or n_hits < 0 or n_hits > n_samples:
        raise UsageError("need 0 <= n_hits <= n_samples, n_samples >= 1")
    p = n_hits / n_samples
    return p, float(np.sqrt(p * (1.0 - p) / n_samples))


def _count_hits(plan: ExperimentPlan, eps_idx: int, start: int, count: int) -> int:
    """Event hits among trajectories [start, start+count) at one epsilon level.

    Pure function of (plan, indices): used directly and as the worker task.
    """
    spec = get_system(plan.system)
    grid = plan.grid()
    eps = plan.epsilon_schedule[eps_idx]
    delta = plan.delta_rule(eps)
    scales = ScaleParams(eps, delta, default_fast_substeps(grid, delta))
    n, K = grid.n_steps, scales.fast_substeps
    d1, d2 = spec.dims.d1, spec.dims.d2
    skip_fast = spec.slow_autonomous
    L = cholesky_factor(grid, plan.hurst)
    h_fast = grid.step / K

    z = np.empty((count, n, d1))
    w_incr = None if skip_fast else np.empty((count, n * K, d2))
    base = RngStream(plan.master_seed, eps_idx * _LEVEL_STRIDE + start)
    for k in range(count):
        gen = base.shifted(k).generator()
        z[k] = gen.standard_normal((n, d1))
        if not skip_fast:
            w_incr[k] = gen.standard_normal((n * K, d2)) * np.sqrt(h_fast)
    bh = np.zeros((count, n + 1, d1))
    bh[:, 1:, :] = np.einsum("ij,kjd->kid", L, z)

    xs, _ = _run_slow_fast(
        spec, grid, scales, bh, w_incr, spec.x0, spec.y0,
        np.sqrt(eps), skip_fast=skip_fast,
    )
    return int(np.count_nonzero(plan.event.hit(xs)))


def run_rare_event(plan: ExperimentPlan) -> EstimateReport:
    """Estimate the event probability along the epsilon schedule.

    Reports p_hat, its standard error, and epsilon * log p_hat per level;
    the log quantity is masked when no hits occurred so downstream trend
    tests can distinguish "unresolvable" from "large".  All-zero hits at
    the largest epsilon reject the plan outright.
    """
    rows = []
    for eps_idx, (eps, n_samp) in enumerate(zip(plan.epsilon_schedule, plan.n_samples)):
        t0 = time.perf_counter()
        chunks = [
            (start, min(plan.batch_size, n_samp - start))
            for start in range(0, n_samp, plan.batch_size)
        ]
        if plan.n_workers > 1:
            with ProcessPoolExecutor(max_workers=plan.n_workers) as pool:
                counts = list(
                    pool.map(
                        _count_hits,
                        [plan] * len(chunks),
                        [eps_idx] * len(chunks),
                        [c[0] for c in chunks],
                        [c[1] for c in chunks],
                    )
                )
            hits = sum(counts)
        else:
            hits = sum(_count_hits(plan, eps_idx, start, cnt) for start, cnt in chunks)
        p_hat, stderr = estimate_probability(hits, n_samp)
        if eps_idx == 0 and hits == 0:
            raise UsageError(
                f"event produced no hits at the largest epsilon {eps}: too rare to "
                "calibrate with this sample budget"
            )
        rows.append(
            EpsilonEstimate(
                epsilon=eps,
                delta=plan.delta_rule(eps),
                n_samples=n_samp,
                n_hits=hits,
                p_hat=p_hat,
                stderr=stderr,
                eps_log_p=None if hits == 0 else eps * float(np.log(p_hat)),
                runtime_s=time.perf_counter() - t0,
            )
        )
    return EstimateReport(rows=tuple(rows))


# --------------------------------------------------------------------------
# averaging-principle convergence study


@dataclass(frozen=True)
class AveragingRow:
    delta: float
    n_replicas: int
    mean_sup_distance: float
    stderr_sup_distance: float
    mean_holder_distance: float


@dataclass(frozen=True)
class AveragingReport:
    rows: tuple[AveragingRow, ...]
    drift_source: str
    alpha: float

    def monotone_decreasing(self) -> bool:
        sups = [r.mean_sup_distance for r in self.rows]
        return all(b < a for a, b in zip(sups, sups[1:]))

    def to_json_dict(self) -> dict:
        return {
            "drift_source": self.drift_source,
            "alpha": self.alpha,
            "per_delta": [
                {
                    "delta": r.delta,
                    "n_replicas": r.n_replicas,
                    "mean_sup_distance": r.mean_sup_distance,
                    "stderr_sup_distance": r.stderr_sup_distance,
                    "mean_holder_distance": r.mean_holder_distance,
                }
                for r in self.rows
            ],
            "monotone_decreasing": self.monotone_decreasing(),
        }

    def csv_header(self) -> list[str]:
        return ["delta", "n_replicas", "mean_sup_distance", "stderr_sup_distance",
                "mean_holder_distance"]

    def csv_rows(self) -> list[list]:
        return [
            [r.delta, r.n_replicas, r.mean_sup_distance, r.stderr_sup_distance,
             r.mean_holder_distance]
            for r in self.rows
        ]


def run_averaging_study(
    system: str,
    delta_schedule: tuple[float, ...],
    n_replicas: int,
    master_seed: int,
    horizon: float = 1.0,
    n_steps: int = 200,
    alpha: float = 0.35,
    drift: Optional[AveragedDrift] = None,
    holder_subsample: int = 4,
) -> AveragingReport:
    """Khasminskii convergence study with the slow noise channel off.

    For each delta, slow-fast trajectories are driven by a zero fBm path
    (the epsilon-noise term vanishes identically) and compared with the
    averaged ODE: the per-replica sup-node distance and the discrete
    alpha-Hoelder seminorm of the difference are averaged over replicas.
    """
    spec = get_system(system)
    if any(not (0.0 < d < 1.0) for d in delta_schedule):
        raise DomainError("delta schedule must lie in (0, 1)")
    if any(b >= a for a, b in zip(delta_schedule, delta_schedule[1:])):
        raise DomainError("delta schedule must be strictly decreasing")
    grid = Grid(horizon, n_steps)
    if drift is None:
        drift = AveragedDrift.from_system(spec)
    averaged = solve_averaged(drift, spec.x0, grid)

    rows = []
    for d_idx, delta in enumerate(delta_schedule):
        scales = ScaleParams(1.0, delta, default_fast_substeps(grid, delta))
        n, K = grid.n_steps, scales.fast_substeps
        d1, d2 = spec.dims.d1, spec.dims.d2
        h_fast = grid.step / K
        w_incr = np.empty((n_replicas, n * K, d2))
        base = RngStream(master_seed, d_idx * _LEVEL_STRIDE)
        for k in range(n_replicas):
            w_incr[k] = base.shifted(k).generator().standard_normal((n * K, d2)) * np.sqrt(
                h_fast
            )
        bh = np.zeros((n_replicas, n + 1, d1))
        xs, _ = _run_slow_fast(spec, grid, scales, bh, w_incr, spec.x0, spec.y0, 0.0)
        diff = xs - averaged.values[None]
        sups = np.max(np.linalg.norm(diff, axis=2), axis=1)
        stride = max(1, holder_subsample)
        coarse = Grid(horizon, n_steps // stride)
        hoelder = [
            holder_seminorm(GridPath(coarse, diff[k, ::stride]), alpha)
            for k in range(n_replicas)
        ]
        rows.append(
            AveragingRow(
                delta=delta,
                n_replicas=n_replicas,
                mean_sup_distance=float(np.mean(sups)),
                stderr_sup_distance=float(np.std(sups, ddof=1) / np.sqrt(n_replicas)),
                mean_holder_distance=float(np.mean(hoelder)),
            )
        )
    return AveragingReport(tuple(rows), drift.source, alpha)


# --------------------------------------------------------------------------
# LDP consistency: Monte Carlo decay rate vs the variational energy


@dataclass(frozen=True)
class ConsistencyReport:
    estimates: EstimateReport
    energy: float
    gaps: tuple[Optional[float], ...]
    monotone_verdict: bool

    def to_json_dict(self, include_timings: bool = False) -> dict:
        return {
            "rare_event": self.estimates.to_json_dict(include_timings),
            "rate_energy": self.energy,
            "gaps": list(self.gaps),
            "gap_monotone_decreasing": self.monotone_verdict,
        }


def run_ldp_consistency(
    plan: ExperimentPlan,
    rate_problem: RateProblem,
    candidates: Optional[list[np.ndarray]] = None,
) -> ConsistencyReport:
    """Joint report of the Monte Carlo decay quantities and the rate energy.

    The gap sequence |(-eps log p_hat) - energy| is emitted per level along
    with a strict-monotonicity verdict; no tolerance on the limit itself is
    claimed (the convergence carries no quantitative rate).
    """
    if not isinstance(rate_problem.constraint, EnterSet):
        raise UsageError("LDP consistency needs an enter_set rate problem")
    if not isinstance(plan.event, EndpointExceeds):
        raise UsageError("LDP consistency currently supports endpoint events")
    if candidates is None:
        hs = rate_problem.constraint
        nrm2 = float(hs.direction @ hs.direction)
        candidates = [hs.direction * (hs.offset / nrm2)]
    report = run_rare_event(plan)
    energy = rate_lower_envelope(rate_problem, candidates)
    gaps = tuple(
        None if r.eps_log_p is None else abs(-r.eps_log_p - energy) for r in report.rows
    )
    defined = [g for g in gaps if g is not None]
    verdict = len(defined) == len(gaps) and all(
        b < a for a, b in zip(defined, defined[1:])
    )
    return ConsistencyReport(
        estimates=replace(report, rate_reference=energy),
        energy=energy,
        gaps=gaps,
        monotone_verdict=verdict,
    )

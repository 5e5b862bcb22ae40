"""Run configuration: one JSON document in, validated dataclasses out.

The parse/emit pair round-trips exactly (parse(emit(config)) == config), and
the canonical emitted form (sorted keys) is what gets hashed into the run
manifest.  Domain guards live here so invalid parameter combinations fail
at parse time with exit code 1, before any computation starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import DomainError, UsageError
from .systems import system_names

__all__ = [
    "ScalesConfig",
    "SampleConfig",
    "SolveConfig",
    "AverageConfig",
    "RateConfig",
    "McEventConfig",
    "McConfig",
    "RunConfig",
    "parse_config",
    "emit_config",
    "load_config",
]


@dataclass(frozen=True)
class ScalesConfig:
    epsilon: float = 0.1
    delta: float = 0.01
    fast_substeps: Optional[int] = None  # None: min(h, delta/20) rule

    def validate(self):
        if not (0.0 < self.delta < self.epsilon <= 1.0):
            raise DomainError(
                f"need 0 < delta < epsilon <= 1, got delta={self.delta}, epsilon={self.epsilon}"
            )
        if self.fast_substeps is not None and self.fast_substeps < 1:
            raise DomainError("fast_substeps must be positive when given")


@dataclass(frozen=True)
class SampleConfig:
    n_paths: int = 100
    method: str = "cholesky"
    covariance_check: bool = True
    check_samples: int = 1000

    def validate(self):
        if self.n_paths < 0:
            raise DomainError("n_paths must be >= 0")
        if self.method not in ("cholesky", "volterra"):
            raise DomainError(f"unknown sampling method {self.method!r}")


@dataclass(frozen=True)
class SolveConfig:
    n_trajectories: int = 1
    save_fast: bool = True

    def validate(self):
        if self.n_trajectories < 1:
            raise DomainError("n_trajectories must be >= 1")


@dataclass(frozen=True)
class AverageConfig:
    delta_schedule: tuple[float, ...] = (0.1, 0.01, 0.001)
    n_replicas: int = 200
    drift_source: str = "closed_form"  # or "ergodic_estimate"
    ergodic_burn_in: float = 2.0
    ergodic_horizon: float = 10.0
    ergodic_replicas: int = 8

    def validate(self):
        if not self.delta_schedule:
            raise DomainError("delta_schedule must be non-empty")
        if any(b >= a for a, b in zip(self.delta_schedule, self.delta_schedule[1:])):
            raise DomainError("delta_schedule must be strictly decreasing")
        if self.drift_source not in ("closed_form", "ergodic_estimate"):
            raise DomainError(f"unknown drift_source {self.drift_source!r}")
        if self.n_replicas < 2:
            raise DomainError("n_replicas must be >= 2")


@dataclass(frozen=True)
class RateConfig:
    kind: str = "hit_endpoint"  # hit_endpoint | enter_set | match_path
    z: tuple[float, ...] = (1.0,)
    direction: tuple[float, ...] = (1.0,)
    offset: float = 1.0
    candidates: tuple[tuple[float, ...], ...] = ()
    target_csv: Optional[str] = None
    target_tol: float = 1e-3
    penalty0: float = 10.0
    stages: int = 5
    endpoint_tol: float = 1e-4
    ball_bound: Optional[float] = None

    def validate(self):
        if self.kind not in ("hit_endpoint", "enter_set", "match_path"):
            raise DomainError(f"unknown rate constraint kind {self.kind!r}")
        if self.kind == "enter_set" and not self.candidates:
            raise DomainError("enter_set rate problems need candidate endpoints")
        if self.kind == "match_path" and not self.target_csv:
            raise DomainError("match_path rate problems need target_csv")
        if self.stages < 1 or self.penalty0 <= 0:
            raise DomainError("penalty continuation needs stages >= 1 and penalty0 > 0")


@dataclass(frozen=True)
class McEventConfig:
    kind: str = "endpoint_exceeds"  # or "sup_norm_exceeds"
    direction: tuple[float, ...] = (1.0,)
    threshold: float = 1.0
    radius: float = 1.0

    def validate(self):
        if self.kind not in ("endpoint_exceeds", "sup_norm_exceeds"):
            raise DomainError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class McConfig:
    event: McEventConfig = field(default_factory=McEventConfig)
    epsilon_schedule: tuple[float, ...] = (0.5, 0.2, 0.1)
    n_samples: tuple[int, ...] = (10_000, 100_000, 1_000_000)
    delta_exponent: float = 2.0
    delta_coeff: float = 1.0
    n_workers: int = 1
    batch_size: int = 4096
    rate_reference: bool = False
    include_timings: bool = False

    def validate(self):
        self.event.validate()
        if not self.epsilon_schedule:
            raise DomainError("epsilon_schedule must be non-empty")


@dataclass(frozen=True)
class RunConfig:
    system: str = "ou_sin"
    hurst: float = 0.7
    alpha: float = 0.35
    horizon: float = 1.0
    n_steps: int = 256
    seed: int = 0
    scales: ScalesConfig = field(default_factory=ScalesConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    solve: SolveConfig = field(default_factory=SolveConfig)
    average: AverageConfig = field(default_factory=AverageConfig)
    rate: RateConfig = field(default_factory=RateConfig)
    mc: McConfig = field(default_factory=McConfig)

    def validate(self):
        if self.system not in system_names():
            raise DomainError(
                f"unknown system {self.system!r}; registered: {', '.join(system_names())}"
            )
        if not (0.5 < self.hurst < 1.0):
            raise DomainError(f"hurst must lie in (1/2, 1), got {self.hurst}")
        if not (1.0 - self.hurst < self.alpha < 0.5):
            raise DomainError(
                f"alpha must lie in (1-hurst, 1/2) = ({1 - self.hurst}, 0.5), got {self.alpha}"
            )
        if self.horizon <= 0 or self.n_steps < 1:
            raise DomainError("horizon must be positive and n_steps >= 1")
        if self.seed < 0:
            raise DomainError("seed must be a non-negative integer")
        self.scales.validate()
        self.sample.validate()
        self.solve.validate()
        self.average.validate()
        self.rate.validate()
        self.mc.validate()
        return self


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_jsonable(v) for v in obj]
    return obj


_NESTED = {
    "scales": ScalesConfig,
    "sample": SampleConfig,
    "solve": SolveConfig,
    "average": AverageConfig,
    "rate": RateConfig,
    "mc": McConfig,
    "event": McEventConfig,
}


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise UsageError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise UsageError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for name in names & set(data):
        raw = data[name]
        if name in _NESTED:
            kwargs[name] = _build(_NESTED[name], raw)
        elif isinstance(raw, list):
            # JSON arrays come back as lists; configs store tuples so
            # dataclass equality gives an exact parse/emit round trip
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in raw)
        else:
            kwargs[name] = raw
    return cls(**kwargs)


def parse_config(data: dict) -> RunConfig:
    """Build and validate a RunConfig from a decoded JSON object."""
    cfg = _build(RunConfig, data)
    cfg.validate()
    return cfg


def emit_config(cfg: RunConfig) -> str:
    """Canonical JSON form (sorted keys); hashing this defines the config hash."""
    return json.dumps(_to_jsonable(cfg), sort_keys=True, indent=2) + "\n"


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)

"""Coefficient systems for the slow-fast dynamics, plus a small registry.

Coefficient callables follow one batched convention: states are 2-D arrays
(batch, dim); drifts return (batch, dim) and diffusions return
(batch, dim, noise_dim).  Scalar use is batch size one.

Assumption constants (Lipschitz bound, dissipativity rates, growth bound)
are declared metadata: they are spot-verified on sampled points by
``spot_check_assumptions``, never enforced symbolically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import UsageError
from .fbm import RngStream

__all__ = [
    "Dims",
    "AssumptionConstants",
    "SystemSpec",
    "get_system",
    "register_system",
    "system_names",
    "spot_check_assumptions",
]


@dataclass(frozen=True)
class Dims:
    m: int  # slow dimension
    n: int  # fast dimension
    d1: int  # fBm dimension
    d2: int  # Bm dimension


@dataclass(frozen=True)
class AssumptionConstants:
    """Declared constants of the standing assumptions.

    lipschitz: joint Lipschitz bound of (f1, f2, sigma2) and the gradient
    bound of sigma1; growth: linear-growth constant of the drifts; beta1:
    pairwise fast contraction rate; beta2: fast mean-reversion rate; c:
    additive constant in the mean-reversion bound.
    """

    lipschitz: float
    growth: float
    beta1: float
    beta2: float
    c: float


@dataclass(frozen=True)
class SystemSpec:
    name: str
    dims: Dims
    f1: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sigma1: Callable[[np.ndarray], np.ndarray]
    sigma2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    constants: AssumptionConstants
    x0: np.ndarray
    y0: np.ndarray
    bar_f1: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # True when the slow channel never reads the fast state (f1 ignores y):
    # averaging is then exact and slow-only functionals may skip the fast
    # dynamics entirely.
    slow_autonomous: bool = False
    notes: str = ""

    def with_initial(self, x0=None, y0=None) -> "SystemSpec":
        new_x0 = self.x0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
        new_y0 = self.y0 if y0 is None else np.atleast_1d(np.asarray(y0, dtype=float))
        return SystemSpec(
            self.name, self.dims, self.f1, self.f2, self.sigma1, self.sigma2,
            self.constants, new_x0, new_y0, self.bar_f1, self.slow_autonomous, self.notes,
        )


def _ou_sin() -> SystemSpec:
    """Scalar test system with sinusoidal slow drift and an OU fast channel.

    Frozen at x, the fast channel dy = -(y-x) dt + sqrt(2) dW has invariant
    law N(x, 1), so the averaged slow drift is sin(x) exp(-1/2).
    """

    def f1(x, y):
        return np.sin(y)

    def f2(x, y):
        return -(y - x)

    def sigma1(x):
        return np.ones(x.shape + (1,))

    def sigma2(x, y):
        return np.full(y.shape + (1,), np.sqrt(2.0))

    def bar_f1(x):
        return np.sin(x) * np.exp(-0.5)

    return SystemSpec(
        name="ou_sin",
        dims=Dims(1, 1, 1, 1),
        f1=f1, f2=f2, sigma1=sigma1, sigma2=sigma2,
        constants=AssumptionConstants(lipschitz=1.0, growth=1.0, beta1=2.0, beta2=1.5, c=2.0),
        x0=np.array([1.0]), y0=np.array([0.0]),
        bar_f1=bar_f1,
    )


def _linear() -> SystemSpec:
    """Linear Gaussian benchmark: the slow component is exactly x0 + sqrt(eps) B^H.

    Zero slow drift, unit slow diffusion, and an inert (noiseless,
    decoupled) fast channel; every rare-event functional of the slow
    component has a closed Gaussian law.
    """

    def f1(x, y):
        return np.zeros_like(x)

    def f2(x, y):
        return -y

    def sigma1(x):
        return np.ones(x.shape + (1,))

    def sigma2(x, y):
        return np.zeros(y.shape + (1,))

    def bar_f1(x):
        return np.zeros_like(x)

    return SystemSpec(
        name="linear",
        dims=Dims(1, 1, 1, 1),
        f1=f1, f2=f2, sigma1=sigma1, sigma2=sigma2,
        constants=AssumptionConstants(lipschitz=1.0, growth=1.0, beta1=2.0, beta2=2.0, c=1.0),
        x0=np.array([0.0]), y0=np.array([0.0]),
        bar_f1=bar_f1,
        slow_autonomous=True,
    )


def _double_well_bounded() -> SystemSpec:
    """Bistable slow drift, saturated to stay globally bounded, with an OU
    fast channel coupled back into the slow drift.

    No closed-form averaged drift: exercised through the ergodic estimator.
    """

    def f1(x, y):
        return np.tanh(x - x**3) + 0.5 * np.tanh(y)

    def f2(x, y):
        return x - y

    def sigma1(x):
        return (1.0 + 0.3 * np.tanh(x))[..., None]

    def sigma2(x, y):
        return np.full(y.shape + (1,), np.sqrt(2.0))

    return SystemSpec(
        name="double_well_bounded",
        dims=Dims(1, 1, 1, 1),
        f1=f1, f2=f2, sigma1=sigma1, sigma2=sigma2,
        constants=AssumptionConstants(lipschitz=4.0, growth=2.0, beta1=2.0, beta2=1.5, c=2.0),
        x0=np.array([0.5]), y0=np.array([0.0]),
    )


_REGISTRY: dict[str, Callable[[], SystemSpec]] = {
    "ou_sin": _ou_sin,
    "linear": _linear,
    "double_well_bounded": _double_well_bounded,
}


def register_system(name: str, factory: Callable[[], SystemSpec]) -> None:
    """Extension point: register a compiled-in coefficient system."""
    _REGISTRY[name] = factory


def system_names() -> list[str]:
    return sorted(_REGISTRY)


def get_system(name: str) -> SystemSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UsageError(
            f"unknown system {name!r}; registered: {', '.join(system_names())}"
        ) from None
    return factory()


def spot_check_assumptions(
    spec: SystemSpec, rng: RngStream, n_points: int = 256, box: float = 4.0
) -> dict:
    """Spot-verify the dissipativity and boundedness assumptions on random points.

    Returns observed margins against the declared constants.  A False flag
    marks a violated declaration on the sampled points; global verification
    for black-box coefficients is out of reach by construction.
    """
    gen = rng.generator()
    d = spec.dims
    x = gen.uniform(-box, box, size=(n_points, d.m))
    y1 = gen.uniform(-box, box, size=(n_points, d.n))
    y2 = gen.uniform(-box, box, size=(n_points, d.n))

    dy = y1 - y2
    lhs1 = 2.0 * np.sum(dy * (spec.f2(x, y1) - spec.f2(x, y2)), axis=1)
    lhs1 += np.sum((spec.sigma2(x, y1) - spec.sigma2(x, y2)) ** 2, axis=(1, 2))
    margin1 = lhs1 + spec.constants.beta1 * np.sum(dy**2, axis=1)

    lhs2 = 2.0 * np.sum(y1 * spec.f2(x, y1), axis=1)
    lhs2 += np.sum(spec.sigma2(x, y1) ** 2, axis=(1, 2))
    bound2 = (
        -spec.constants.beta2 * np.sum(y1**2, axis=1)
        + spec.constants.c * np.sum(x**2, axis=1)
        + spec.constants.c
    )
    margin2 = lhs2 - bound2

    f1_sup = float(np.max(np.linalg.norm(spec.f1(x, y1), axis=1)))
    return {
        "pairwise_dissipativity_ok": bool(np.all(margin1 <= 1e-9)),
        "pairwise_dissipativity_worst": float(np.max(margin1)),
        "mean_reversion_ok": bool(np.all(margin2 <= 1e-9)),
        "mean_reversion_worst": float(np.max(margin2)),
        "f1_sup_observed": f1_sup,
    }

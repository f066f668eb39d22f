"""Parameters, states and the energy functionals of x'' + mu x' + alpha x^p = 0.

The scalar functions accept floats. ``energy_array`` and friends accept numpy
arrays of positions and velocities and are what the analysis layer uses on
whole trajectories.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels


class ParameterError(ValueError):
    """Raised for parameter triples outside p odd >= 3, mu >= 0, alpha > 0."""


class NonFiniteError(ArithmeticError):
    """Raised when a computation produces NaN or infinity."""


def _finite(value, what):
    if isinstance(value, np.ndarray):
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{what} is not finite")
    elif not math.isfinite(value):
        raise NonFiniteError(f"{what} is not finite: {value!r}")
    return value


@dataclass(frozen=True)
class DuffingParams:
    p: int
    mu: float
    alpha: float

    def __post_init__(self):
        p, mu, alpha = self.p, self.mu, self.alpha
        if isinstance(p, bool) or not isinstance(p, (int, np.integer)):
            if isinstance(p, float) and p.is_integer():
                object.__setattr__(self, "p", int(p))
                p = int(p)
            else:
                raise ParameterError(f"p must be an integer, got {p!r}")
        for name, value in (("mu", mu), ("alpha", alpha)):
            if not isinstance(value, (int, float, np.floating, np.integer)) or isinstance(value, bool):
                raise ParameterError(f"{name} must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
        if p < 3:
            raise ParameterError(f"p must be at least 3, got {p}")
        if p % 2 == 0:
            raise ParameterError(f"p must be odd, got {p}")
        if mu < 0:
            raise ParameterError(f"mu must be nonnegative, got {mu}")
        if alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {alpha}")
        object.__setattr__(self, "p", int(p))
        object.__setattr__(self, "mu", float(mu))
        object.__setattr__(self, "alpha", float(alpha))

    @property
    def energy_decay_slope(self) -> float:
        """Log-log slope of the mechanical energy bound, -(p+1)/(p-1)."""
        return -(self.p + 1) / (self.p - 1)

    @property
    def solution_decay_slope(self) -> float:
        return -1.0 / (self.p - 1)

    @property
    def modified_energy_decay_slope(self) -> float:
        return -2.0 / (self.p - 1)


@dataclass(frozen=True)
class State:
    x: float
    y: float

    def __post_init__(self):
        for name in ("x", "y"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise NonFiniteError(f"state component {name} is not a real number: {value!r}") from None
            if not math.isfinite(value):
                raise NonFiniteError(f"state component {name} is not finite: {value!r}")
            object.__setattr__(self, name, value)


def validate_params(p, mu, alpha) -> DuffingParams:
    return DuffingParams(p, mu, alpha)


def potential(params: DuffingParams, x: float) -> float:
    """alpha/(p+1) * x^(p+1); nonnegative because p+1 is even."""
    _finite(x, "x")
    return _finite(_kernels.potential(params.p, params.alpha, float(x)), "potential")


def vector_field(params: DuffingParams, s: State) -> tuple[float, float]:
    dx, dy = _kernels.vector_field(params.p, params.mu, params.alpha, s.x, s.y)
    _finite(dy, "vector field")
    return dx, dy


def energy(params: DuffingParams, s: State) -> float:
    return _finite(_energy(params, s.x, s.y), "energy")


def modified_energy(params: DuffingParams, s: State) -> float:
    return _finite(_modified_energy(params, s.x, s.y), "modified energy")


def dissipation_functional(params: DuffingParams, s: State) -> float:
    return _finite(_dissipation(params, s.x, s.y), "dissipation functional")


def discrete_gradient(params: DuffingParams, a: float, b: float) -> float:
    """Two-point gradient G(a, b) of the potential.

    G(a, b) * (a - b) == V(a) - V(b) up to rounding, G(x, x) == alpha * x^p.
    """
    _finite(a, "a")
    _finite(b, "b")
    value = _kernels.discrete_gradient(params.p, params.alpha, float(a), float(b))
    return _finite(value, "discrete gradient")


def _energy(params, x, y):
    return 0.5 * y * y + params.alpha * x ** (params.p + 1) / (params.p + 1)


def _modified_energy(params, x, y):
    # completed-square form; equal to 1/2 y^2 + mu/2 xy + mu^2/4 x^2 + V(x)
    # but never negative in floating point
    s = y + params.mu * x
    return 0.25 * s * s + 0.25 * y * y + params.alpha * x ** (params.p + 1) / (params.p + 1)


def _dissipation(params, x, y):
    return 0.5 * params.mu * y * y + 0.5 * params.mu * params.alpha * x ** (params.p + 1)


def energy_array(params: DuffingParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _finite(_energy(params, np.asarray(x, float), np.asarray(y, float)), "energy")


def modified_energy_array(params: DuffingParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _finite(_modified_energy(params, np.asarray(x, float), np.asarray(y, float)), "modified energy")


def dissipation_array(params: DuffingParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _finite(_dissipation(params, np.asarray(x, float), np.asarray(y, float)), "dissipation functional")

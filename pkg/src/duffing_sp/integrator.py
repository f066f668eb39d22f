"""Discrete-gradient time stepping for the Duffing-type system and an RK4 oracle.

One step of the scheme solves

    (x1 - x0)/dt = (y1 + y0)/2
    (y1 - y0)/dt = -G(x1, x0) - mu (y1 + y0)/2

with G the discrete gradient of the potential. Eliminating y1 leaves one
scalar polynomial equation in x1, solved by Newton from the explicit Euler
predictor with a bracketing bisection fallback. For odd p the discrete
gradient is nondecreasing in each argument, so the scalar residual is
strictly increasing and its real root is unique.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import DuffingParams, NonFiniteError, State

MAX_STORED_SAMPLES = 1_000_000


class NonConvergenceError(RuntimeError):
    def __init__(self, message, last_iterate, residual):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class IntegrationError(RuntimeError):
    """A step failed; carries the failing step index and its start time."""

    def __init__(self, message, step, time):
        super().__init__(message)
        self.step = step
        self.time = time


class MultiRootWarning(RuntimeWarning):
    pass


class ConfigError(ValueError):
    pass


def default_record_stride(dt: float, t_end: float) -> int:
    n_steps = int(round(t_end / dt))
    return max(1, math.ceil((n_steps + 1) / MAX_STORED_SAMPLES))


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    t_end: float
    newton_tol: float = 1e-12
    max_newton_iters: int = 50
    record_stride: int | None = None

    def __post_init__(self):
        for name in ("dt", "t_end", "newton_tol"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be a positive finite number, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.t_end < self.dt:
            raise ConfigError(f"t_end ({self.t_end}) must be at least dt ({self.dt})")
        if int(self.max_newton_iters) != self.max_newton_iters or self.max_newton_iters < 1:
            raise ConfigError(f"max_newton_iters must be a positive integer, got {self.max_newton_iters!r}")
        object.__setattr__(self, "max_newton_iters", int(self.max_newton_iters))
        stride = self.record_stride
        if stride is None:
            stride = default_record_stride(self.dt, self.t_end)
        if int(stride) != stride or stride < 1:
            raise ConfigError(f"record_stride must be a positive integer, got {stride!r}")
        object.__setattr__(self, "record_stride", int(stride))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class StepOutcome:
    next: State
    iterations: int
    final_residual: float
    # residual tolerance actually applied: newton_tol, raised to the rounding
    # floor of the residual (largest term, and slope times ulp(x)) when bigger
    tolerance: float = field(default=0.0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states of one run.

    ``dissipation`` is the cumulative discrete dissipation
    (mu/4) * sum (y[l+1] + y[l])^2 * dt accumulated over every step, not just
    the recorded ones. ``newton_iters[k]`` is the iteration count of the step
    that produced sample k (0 for the initial sample).
    """

    params: DuffingParams
    config: SchemeConfig
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    dissipation: np.ndarray
    newton_iters: np.ndarray

    def __post_init__(self):
        for arr in (self.t, self.x, self.y, self.dissipation, self.newton_iters):
            arr.flags.writeable = False

    def __len__(self):
        return len(self.t)

    @property
    def samples(self) -> list[tuple[float, State]]:
        return [(float(t), State(x, y)) for t, x, y in zip(self.t, self.x, self.y)]

    @property
    def final_state(self) -> State:
        return State(self.x[-1], self.y[-1])

    @property
    def dt_recorded(self) -> float:
        return self.config.record_stride * self.config.dt


def sp_residual(params: DuffingParams, dt: float, prev: State, x_next: float) -> float:
    """Residual of the velocity equation after eliminating y[n+1].

    R(x) = 2(x - x0)/dt^2 - 2 y0/dt + G(x, x0) + mu (x - x0)/dt
    """
    value = _kernels.residual(params.p, params.mu, params.alpha, float(dt), prev.x, prev.y, float(x_next))
    if not math.isfinite(value):
        raise NonFiniteError(f"residual overflow at x_next={x_next!r}")
    return value


def sp_residual_derivative(params: DuffingParams, dt: float, prev: State, x_next: float) -> float:
    value = _kernels.residual_derivative(params.p, params.mu, params.alpha, float(dt), prev.x, float(x_next))
    if not math.isfinite(value):
        raise NonFiniteError(f"residual derivative overflow at x_next={x_next!r}")
    return value


def _residual_tolerance(params, dt, prev, x, tol):
    scale = _kernels.residual_scale(params.p, params.mu, params.alpha, dt, prev.x, prev.y, x)
    jac = _kernels.residual_derivative(params.p, params.mu, params.alpha, dt, prev.x, x)
    return _kernels.residual_tolerance(tol, scale, jac, x)


def _bisection_solve(params: DuffingParams, config: SchemeConfig, prev: State):
    """Bracket the root by expanding outward from the predictor, then bisect.

    Returns (x, iterations, residual, tolerance).
    """
    dt, tol = config.dt, config.newton_tol

    def res(x):
        r = _kernels.residual(params.p, params.mu, params.alpha, dt, prev.x, prev.y, x)
        if not math.isfinite(r):
            raise NonFiniteError(f"residual overflow while bracketing at x={x!r}")
        return r

    pred = prev.x + dt * prev.y
    r_pred = res(pred)
    if r_pred == 0.0:
        return pred, 0, 0.0, _residual_tolerance(params, dt, prev, pred, tol)

    h = max(abs(pred - prev.x), tol * max(1.0, abs(pred)), math.ulp(max(1.0, abs(pred))))
    lo = hi = None
    for _ in range(2100):
        r_left, r_right = res(pred - h), res(pred + h)
        # nearest sign change first; equal distances tie toward the left
        if (r_left <= 0.0) != (r_pred <= 0.0) or r_left == 0.0:
            lo, hi, r_lo, r_hi = pred - h, pred, r_left, r_pred
            break
        if (r_right <= 0.0) != (r_pred <= 0.0) or r_right == 0.0:
            lo, hi, r_lo, r_hi = pred, pred + h, r_pred, r_right
            break
        h *= 2.0
    if lo is None:
        raise NonConvergenceError("could not bracket a root of the step residual", pred, r_pred)

    probes = np.linspace(lo, hi, 33)
    derivs = [_kernels.residual_derivative(params.p, params.mu, params.alpha, dt, prev.x, float(z)) for z in probes]
    if min(derivs) <= 0.0:
        warnings.warn(
            f"step residual is not monotone on [{lo!r}, {hi!r}]; taking the root nearest the predictor",
            MultiRootWarning,
            stacklevel=3,
        )

    iterations = 0
    best_x, best_r = (lo, r_lo) if abs(r_lo) <= abs(r_hi) else (hi, r_hi)
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        r_mid = res(mid)
        iterations += 1
        if abs(r_mid) < abs(best_r):
            best_x, best_r = mid, r_mid
        if r_mid == 0.0:
            break
        if (r_mid < 0.0) == (r_lo < 0.0):
            lo, r_lo = mid, r_mid
        else:
            hi, r_hi = mid, r_mid
        tol_r = _residual_tolerance(params, dt, prev, mid, tol)
        if abs(r_mid) <= tol_r and hi - lo <= tol * max(1.0, abs(mid)):
            break

    tol_r = _residual_tolerance(params, dt, prev, best_x, tol)
    if abs(best_r) > tol_r:
        raise NonConvergenceError(
            f"bisection stalled with residual {best_r!r} above tolerance {tol_r!r}", best_x, best_r
        )
    return best_x, iterations, best_r, tol_r


def sp_step(params: DuffingParams, config: SchemeConfig, prev: State, *, force_bisection: bool = False) -> StepOutcome:
    """Advance one step of the discrete-gradient scheme from ``prev``."""
    dt, tol = config.dt, config.newton_tol
    iterations = 0
    status = _kernels.NEEDS_FALLBACK
    if not force_bisection:
        status, x, iterations, r = _kernels.newton_solve(
            params.p, params.mu, params.alpha, dt, prev.x, prev.y, tol, config.max_newton_iters
        )
    if status == _kernels.OK:
        tol_r = _residual_tolerance(params, dt, prev, x, tol)
    else:
        x, extra, r, tol_r = _bisection_solve(params, config, prev)
        iterations += extra
    y = 2.0 * (x - prev.x) / dt - prev.y
    if not (math.isfinite(x) and math.isfinite(y)):
        raise NonFiniteError(f"step produced a non-finite state ({x!r}, {y!r})")
    return StepOutcome(State(x, y), iterations, r, tol_r)


def integrate(params: DuffingParams, config: SchemeConfig, init: State) -> Trajectory:
    """Run the scheme from ``init`` over [0, t_end], recording every record_stride-th step."""
    n_steps = config.n_steps
    stride = config.record_stride
    n_rec = n_steps // stride + 1
    t_out = np.empty(n_rec)
    x_out = np.empty(n_rec)
    y_out = np.empty(n_rec)
    d_out = np.empty(n_rec)
    it_out = np.zeros(n_rec, dtype=np.int64)
    t_out[0], x_out[0], y_out[0], d_out[0] = 0.0, init.x, init.y, 0.0

    p, mu, alpha, dt = params.p, params.mu, params.alpha, config.dt
    x, y = init.x, init.y
    d_sum = d_comp = 0.0
    n = 0
    while n < n_steps:
        status, n, x, y, d_sum, d_comp = _kernels.sp_run(
            p, mu, alpha, dt, config.newton_tol, config.max_newton_iters, x, y, d_sum, d_comp,
            n, n_steps, stride, t_out, x_out, y_out, d_out, it_out,
        )
        if status == _kernels.OK:
            break
        # the compiled loop stopped at step n; take it on the slow path
        try:
            outcome = sp_step(params, config, State(x, y), force_bisection=True)
        except (NonConvergenceError, NonFiniteError) as exc:
            raise IntegrationError(f"step {n} (t={n * dt:g}) failed: {exc}", n, n * dt) from exc
        xn, yn = outcome.next.x, outcome.next.y
        s = yn + y
        d_sum, d_comp = _kernels.neumaier_add(d_sum, d_comp, 0.25 * mu * s * s * dt)
        x, y = xn, yn
        n += 1
        if n % stride == 0:
            k = n // stride
            t_out[k], x_out[k], y_out[k], d_out[k] = n * dt, x, y, d_sum + d_comp
            it_out[k] = outcome.iterations

    return Trajectory(params, config, t_out, x_out, y_out, d_out, it_out)


def rk4_step(params: DuffingParams, dt: float, prev: State) -> State:
    """One classical fourth-order Runge-Kutta step; used only as an oracle."""
    x, y = _kernels.rk4_step(params.p, params.mu, params.alpha, float(dt), prev.x, prev.y)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise NonFiniteError(f"RK4 step produced a non-finite state ({x!r}, {y!r})")
    return State(x, y)


def rk4_integrate(params: DuffingParams, dt: float, t_end: float, init: State, record_stride: int = 1):
    """Fixed-step RK4 reference run; returns (t, x, y) arrays."""
    n_steps = int(round(t_end / dt))
    xs, ys = _kernels.rk4_run(params.p, params.mu, params.alpha, float(dt), n_steps, init.x, init.y, record_stride)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise NonFiniteError("RK4 reference run blew up")
    t = np.arange(len(xs)) * (record_stride * dt)
    return t, xs, ys

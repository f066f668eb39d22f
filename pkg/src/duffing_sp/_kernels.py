"""Compiled scalar kernels shared by the model, the integrator and the RK4 oracle.

Everything here works on plain floats and ints so numba can compile it; the
public modules wrap these with validation and error reporting.
"""
import math

import numpy as np
from numba import njit

EPS = 2.220446049250313e-16
# Residual evaluation cannot beat a few ulps of its largest term, nor the
# change in R caused by a one-ulp change of x.
RESIDUAL_FLOOR_ULPS = 8.0

OK = 0
NEEDS_FALLBACK = 1
NONFINITE = 2


@njit(cache=True)
def potential(p, alpha, x):
    return alpha * x ** (p + 1) / (p + 1)


@njit(cache=True)
def discrete_gradient(p, alpha, a, b):
    # h_k = a*h_{k-1} + b^k, so h_p = sum_{l=0}^{p} a^(p-l) b^l
    h = 1.0
    bk = 1.0
    for _ in range(p):
        bk *= b
        h = a * h + bk
    return alpha * h / (p + 1)


@njit(cache=True)
def discrete_gradient_da(p, alpha, a, b):
    # d/da of discrete_gradient: (alpha/(p+1)) sum_{l=0}^{p-1} (p-l) a^(p-l-1) b^l
    g = float(p)
    bk = 1.0
    for k in range(1, p):
        bk *= b
        g = a * g + (p - k) * bk
    return alpha * g / (p + 1)


@njit(cache=True)
def residual(p, mu, alpha, dt, xp, yp, xn):
    d = xn - xp
    return 2.0 * d / (dt * dt) - 2.0 * yp / dt + discrete_gradient(p, alpha, xn, xp) + mu * d / dt


@njit(cache=True)
def residual_scale(p, mu, alpha, dt, xp, yp, xn):
    d = xn - xp
    return (
        abs(2.0 * d / (dt * dt))
        + abs(2.0 * yp / dt)
        + abs(discrete_gradient(p, alpha, xn, xp))
        + abs(mu * d / dt)
    )


@njit(cache=True)
def residual_derivative(p, mu, alpha, dt, xp, xn):
    return 2.0 / (dt * dt) + mu / dt + discrete_gradient_da(p, alpha, xn, xp)


@njit(cache=True)
def residual_tolerance(tol, scale, jac, x):
    return max(tol, RESIDUAL_FLOOR_ULPS * EPS * scale + abs(jac) * EPS * max(abs(x), 1e-300))


@njit(cache=True)
def newton_solve(p, mu, alpha, dt, xp, yp, tol, max_iters):
    """Newton on the eliminated scalar equation, started from the Euler predictor.

    Returns (status, x, iterations, residual). A non-OK status means the
    caller must take over with the bracketed solver.
    """
    x = xp + dt * yp
    r = residual(p, mu, alpha, dt, xp, yp, x)
    if not math.isfinite(r):
        return NEEDS_FALLBACK, x, 0, r
    for it in range(1, max_iters + 1):
        jac = residual_derivative(p, mu, alpha, dt, xp, x)
        if not (jac > 0.0) or not math.isfinite(jac):
            return NEEDS_FALLBACK, x, it - 1, r
        dx = r / jac
        x -= dx
        r = residual(p, mu, alpha, dt, xp, yp, x)
        if not math.isfinite(r) or not math.isfinite(x):
            return NEEDS_FALLBACK, x, it, r
        tol_r = residual_tolerance(tol, residual_scale(p, mu, alpha, dt, xp, yp, x), jac, x)
        if abs(r) <= tol_r and abs(dx) <= tol * max(1.0, abs(x)):
            return OK, x, it, r
    return NEEDS_FALLBACK, x, max_iters, r


@njit(cache=True)
def neumaier_add(s, c, term):
    t = s + term
    if abs(s) >= abs(term):
        c += (s - t) + term
    else:
        c += (term - t) + s
    return t, c


@njit(cache=True)
def sp_run(p, mu, alpha, dt, tol, max_iters, x, y, d_sum, d_comp,
           n_start, n_end, stride, t_out, x_out, y_out, d_out, it_out):
    """Advance steps n_start..n_end-1, recording every `stride`-th state.

    Stops early (returning the index of the offending step) when Newton needs
    the fallback or the new state is not finite.
    """
    for n in range(n_start, n_end):
        status, xn, iters, r = newton_solve(p, mu, alpha, dt, x, y, tol, max_iters)
        if status != OK:
            return status, n, x, y, d_sum, d_comp
        yn = 2.0 * (xn - x) / dt - y
        if not math.isfinite(yn):
            return NONFINITE, n, x, y, d_sum, d_comp
        s = yn + y
        d_sum, d_comp = neumaier_add(d_sum, d_comp, 0.25 * mu * s * s * dt)
        x = xn
        y = yn
        m = n + 1
        if m % stride == 0:
            k = m // stride
            t_out[k] = m * dt
            x_out[k] = x
            y_out[k] = y
            d_out[k] = d_sum + d_comp
            it_out[k] = iters
    return OK, n_end, x, y, d_sum, d_comp


@njit(cache=True)
def vector_field(p, mu, alpha, x, y):
    return y, -alpha * x ** p - mu * y


@njit(cache=True)
def rk4_step(p, mu, alpha, dt, x, y):
    k1x, k1y = vector_field(p, mu, alpha, x, y)
    k2x, k2y = vector_field(p, mu, alpha, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y)
    k3x, k3y = vector_field(p, mu, alpha, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y)
    k4x, k4y = vector_field(p, mu, alpha, x + dt * k3x, y + dt * k3y)
    return (
        x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
    )


@njit(cache=True)
def rk4_run(p, mu, alpha, dt, n_steps, x, y, stride):
    n_rec = n_steps // stride + 1
    xs = np.empty(n_rec)
    ys = np.empty(n_rec)
    xs[0] = x
    ys[0] = y
    for n in range(n_steps):
        x, y = rk4_step(p, mu, alpha, dt, x, y)
        m = n + 1
        if m % stride == 0:
            xs[m // stride] = x
            ys[m // stride] = y
    return xs, ys

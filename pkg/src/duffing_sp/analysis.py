"""Energy ledgers, power-law decay fits and empirical checks of the decay estimates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d

from .integrator import Trajectory
from .model import DuffingParams, energy_array, modified_energy_array

VALUE_FLOOR = 1e-30
MIN_FIT_SAMPLES = 50
PEAK_WINDOW = 20.0
# relative growth allowed between consecutive sub-window envelope sups
TREND_TOLERANCE = 0.05


class AnalysisError(ValueError):
    pass


class PreconditionError(AnalysisError):
    pass


@dataclass(frozen=True, eq=False)
class EnergyLedger:
    t: np.ndarray
    energy: np.ndarray
    modified_energy: np.ndarray
    dissipation: np.ndarray
    residual: np.ndarray

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def max_abs_residual_until(self, t_max: float) -> float:
        mask = self.t <= t_max * (1 + 1e-12)
        return float(np.max(np.abs(self.residual[mask])))


@dataclass(frozen=True)
class DecayFitReport:
    t_lo: float
    t_hi: float
    slope: float
    intercept: float
    theoretical_slope: float
    envelope: float
    n_samples: int
    n_clipped: int
    # sup of value * t^(-theoretical_slope) over consecutive log-spaced sub-windows
    window_envelopes: tuple[float, ...] = ()

    def is_non_trending(self, tolerance: float = TREND_TOLERANCE) -> bool:
        """True when no later sub-window envelope exceeds an earlier one by more than `tolerance`."""
        env = np.asarray(self.window_envelopes)
        if env.size < 2:
            return bool(np.isfinite(self.envelope))
        running = np.maximum.accumulate(env)
        return bool(np.isfinite(self.envelope) and np.all(env[1:] <= running[:-1] * (1 + tolerance)))


@dataclass(frozen=True)
class InequalityReport:
    nu_hat: float
    t_at_inf: float
    positive_fraction: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.nu_hat > 0 and self.positive_fraction <= 1e-3


@dataclass(frozen=True)
class EnergyAtTime:
    params: DuffingParams
    t: float
    energy: float

    @property
    def label(self) -> str:
        return f"p={self.params.p} alpha={self.params.alpha:g} mu={self.params.mu:g}"


def build_ledger(traj: Trajectory) -> EnergyLedger:
    if len(traj) == 0:
        raise AnalysisError("empty trajectory")
    e = energy_array(traj.params, traj.x, traj.y)
    me = modified_energy_array(traj.params, traj.x, traj.y)
    d = np.asarray(traj.dissipation, dtype=float)
    if not np.all(np.isfinite(d)):
        raise AnalysisError("non-finite dissipation in trajectory")
    residual = e + d - e[0]
    return EnergyLedger(np.asarray(traj.t), e, me, d, residual)


def default_window(traj: Trajectory) -> tuple[float, float]:
    t_end = float(traj.t[-1])
    return max(1.0, t_end / 10), t_end


def fit_decay(t, values, window, theoretical_slope: float, n_subwindows: int = 5) -> DecayFitReport:
    """Least-squares line through (log t, log value) restricted to `window`.

    Values below 1e-30 are dropped before taking logs and counted in
    ``n_clipped``. The envelope constant is sup(value * t^(-theoretical_slope)).
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    t_lo, t_hi = float(window[0]), float(window[1])
    if t_lo < 1.0:
        raise AnalysisError(f"fit window must start at t >= 1, got {t_lo}")
    if t_hi <= t_lo:
        raise AnalysisError(f"empty fit window [{t_lo}, {t_hi}]")
    in_window = (t >= t_lo) & (t <= t_hi)
    n_window = int(np.count_nonzero(in_window))
    if n_window == 0:
        raise AnalysisError(f"no samples in window [{t_lo}, {t_hi}]")
    keep = in_window & (values > VALUE_FLOOR)
    n_kept = int(np.count_nonzero(keep))
    if n_kept == 0:
        raise AnalysisError(f"all {n_window} samples in [{t_lo}, {t_hi}] fall below the {VALUE_FLOOR:g} floor")
    if n_kept < MIN_FIT_SAMPLES:
        raise AnalysisError(f"only {n_kept} usable samples in window, need {MIN_FIT_SAMPLES}")

    lt, lv = np.log(t[keep]), np.log(values[keep])
    slope, intercept = np.polyfit(lt, lv, 1)
    scaled = values[keep] * t[keep] ** (-theoretical_slope)
    edges = np.exp(np.linspace(np.log(t_lo), np.log(t_hi), n_subwindows + 1))
    tk = t[keep]
    sub = []
    for a, b in zip(edges[:-1], edges[1:]):
        m = (tk >= a) & (tk <= b)
        if np.any(m):
            sub.append(float(scaled[m].max()))
    return DecayFitReport(
        t_lo, t_hi, float(slope), float(intercept), float(theoretical_slope),
        float(scaled.max()), n_kept, n_window - n_kept, tuple(sub),
    )


def _require_damping(traj: Trajectory, what: str):
    if traj.params.mu <= 0:
        raise PreconditionError(f"{what} needs mu > 0, got mu={traj.params.mu}")


def check_energy_decay(traj: Trajectory, window=None) -> DecayFitReport:
    _require_damping(traj, "energy decay check")
    e = energy_array(traj.params, traj.x, traj.y)
    return fit_decay(traj.t, e, window or default_window(traj), traj.params.energy_decay_slope)


def peak_envelope(t, values, width: float = PEAK_WINDOW) -> np.ndarray:
    """Trailing running maximum of |values| over the last `width` time units."""
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        return np.abs(values)
    h = t[1] - t[0]
    size = max(1, int(round(width / h)) + 1)
    # shift the filter so sample k sees [k - size + 1, k]
    return maximum_filter1d(np.abs(values), size=size, origin=(size - 1) // 2, mode="nearest")


def check_solution_decay(traj: Trajectory, window=None, peak_width: float = PEAK_WINDOW) -> DecayFitReport:
    _require_damping(traj, "solution decay check")
    env = peak_envelope(traj.t, traj.x, peak_width)
    return fit_decay(traj.t, env, window or default_window(traj), traj.params.solution_decay_slope)


def check_modified_energy_decay(traj: Trajectory, window=None) -> DecayFitReport:
    _require_damping(traj, "modified energy decay check")
    me = modified_energy_array(traj.params, traj.x, traj.y)
    return fit_decay(traj.t, me, window or default_window(traj), traj.params.modified_energy_decay_slope)


def estimate_nu(t, modified_energy, p: int) -> InequalityReport:
    """Smallest nu with dE/dt + nu E^((p+1)/2) / (1 + E^((p-1)/2)) <= 0 on the samples.

    dE/dt uses centered differences (one-sided at the ends). The infimum is
    taken over samples where the modified energy is actually decreasing;
    samples where it increases are counted in ``positive_fraction``.
    """
    t = np.asarray(t, dtype=float)
    me = np.asarray(modified_energy, dtype=float)
    if len(t) < 2:
        raise AnalysisError("need at least two samples")
    rate = np.gradient(me, t)
    usable = me > VALUE_FLOOR
    n = int(np.count_nonzero(usable))
    if n == 0:
        raise AnalysisError("modified energy is below the floor everywhere")
    positive = usable & (rate > 0)
    decreasing = usable & (rate < 0)
    frac = np.count_nonzero(positive) / n
    if not np.any(decreasing):
        return InequalityReport(0.0, float("nan"), float(frac), n)
    e = me[decreasing]
    ratio = -rate[decreasing] * (1.0 + e ** ((p - 1) / 2)) / e ** ((p + 1) / 2)
    k = int(np.argmin(ratio))
    return InequalityReport(float(ratio[k]), float(t[decreasing][k]), float(frac), n)


def check_inequality(traj: Trajectory) -> InequalityReport:
    _require_damping(traj, "differential inequality check")
    me = modified_energy_array(traj.params, traj.x, traj.y)
    return estimate_nu(traj.t, me, traj.params.p)


def energy_at(traj: Trajectory, t_query: float) -> EnergyAtTime:
    half = 0.5 * traj.dt_recorded
    if t_query < traj.t[0] - half or t_query > traj.t[-1] + half:
        raise AnalysisError(f"t={t_query} outside trajectory range [{traj.t[0]}, {traj.t[-1]}]")
    k = int(np.argmin(np.abs(traj.t - t_query)))
    e = energy_array(traj.params, traj.x[k:k + 1], traj.y[k:k + 1])[0]
    return EnergyAtTime(traj.params, float(traj.t[k]), float(e))


def compare_at_time(trajectories, t_query: float) -> list[EnergyAtTime]:
    """Energies at the sample nearest `t_query`, sorted ascending."""
    entries = [energy_at(tr, t_query) for tr in trajectories]
    return sorted(entries, key=lambda e: e.energy)


def is_strictly_increasing(entries, key) -> bool:
    """Whether energy strictly increases when `entries` are ordered by `key`."""
    ordered = sorted(entries, key=key)
    return all(a.energy < b.energy for a, b in zip(ordered, ordered[1:]))

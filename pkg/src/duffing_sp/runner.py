"""Single runs, parameter sweeps and the six-panel energy reproduction."""
from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    build_ledger,
    check_energy_decay,
    check_inequality,
    check_modified_energy_decay,
    check_solution_decay,
    compare_at_time,
    is_strictly_increasing,
)
from .files import write_ledger_csv, write_plot_data, write_trajectory_csv
from .integrator import (
    ConfigError,
    IntegrationError,
    SchemeConfig,
    Trajectory,
    default_record_stride,
    integrate,
)
from .model import DuffingParams, NonFiniteError, ParameterError, State, energy

REFERENCE_P = (3, 5, 7)
REFERENCE_ALPHA = (1.0, 100.0)
REFERENCE_MU = (0.0, 0.1, 1.0, 10.0, 100.0)
REFERENCE_INIT = (2.0, 0.0)
REFERENCE_DT = 0.01
REFERENCE_T_END = 5000.0
REFERENCE_TAIL = (500.0, 5000.0)
CLI_RECORD_STRIDE = 10

CHECKS = ("ledger", "energy-decay", "solution-decay", "inequality", "modified-energy-decay")
DAMPED_ONLY = frozenset(CHECKS[1:])

OK, CHECK_FAILED, INTEGRATION_FAILED, INVALID = "ok", "check-failed", "integration-failed", "invalid"
EXIT_CODES = {OK: 0, CHECK_FAILED: 1, INTEGRATION_FAILED: 2, INVALID: 3}


def cli_record_stride(dt: float, t_end: float) -> int:
    n_steps = int(round(t_end / dt))
    if n_steps % CLI_RECORD_STRIDE == 0:
        return max(CLI_RECORD_STRIDE, default_record_stride(dt, t_end))
    return default_record_stride(dt, t_end)


def parse_checks(checks) -> tuple[str, ...]:
    if isinstance(checks, str):
        checks = [c.strip() for c in checks.split(",") if c.strip()]
    checks = tuple(checks)
    if checks == ("all",):
        return CHECKS
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown check(s) {unknown}; choose from {', '.join(CHECKS)}")
    return checks


@dataclass(frozen=True)
class RunSpec:
    params: DuffingParams
    init: State
    scheme: SchemeConfig
    out: Path
    checks: tuple[str, ...] = ("ledger",)

    def __post_init__(self):
        object.__setattr__(self, "checks", parse_checks(self.checks))
        object.__setattr__(self, "out", Path(self.out))
        if self.params.mu == 0:
            bad = sorted(DAMPED_ONLY.intersection(self.checks))
            if bad:
                raise ConfigError(f"check(s) {', '.join(bad)} need mu > 0")


@dataclass(frozen=True)
class SweepSpec:
    p_values: tuple
    alpha_values: tuple
    mu_values: tuple
    init: State
    dt: float
    t_end: float
    out: Path
    newton_tol: float = 1e-12
    max_newton_iters: int = 50
    record_stride: int | None = None
    jobs: int | None = None
    checks: tuple[str, ...] = ("ledger",)

    def __post_init__(self):
        for name in ("p_values", "alpha_values", "mu_values"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        object.__setattr__(self, "checks", parse_checks(self.checks))
        object.__setattr__(self, "out", Path(self.out))
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError(f"jobs must be positive, got {self.jobs}")
        # fail fast on a bad shared scheme; bad grid points fail individually
        self.scheme()

    def scheme(self) -> SchemeConfig:
        stride = self.record_stride or cli_record_stride(self.dt, self.t_end)
        return SchemeConfig(self.dt, self.t_end, self.newton_tol, self.max_newton_iters, stride)

    def grid(self):
        return list(itertools.product(self.p_values, self.alpha_values, self.mu_values))


@dataclass(eq=False)
class PointResult:
    label: str
    p: object
    alpha: object
    mu: object
    status: str
    report: dict
    trajectory: Trajectory | None = None
    error: str | None = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]


def point_label(p, alpha, mu) -> str:
    return f"p{p}_alpha{float(alpha):g}_mu{float(mu):g}"


def run_checks(traj: Trajectory, ledger, checks, window=None) -> dict:
    """Evaluate the requested checks; damped-only checks are skipped when mu == 0."""
    cfg = traj.config
    e0 = float(ledger.energy[0])
    scale = max(1.0, e0)
    results = {}
    for name in checks:
        if name in DAMPED_ONLY and traj.params.mu == 0:
            continue
        if name == "ledger":
            n_steps = cfg.n_steps
            bound = n_steps * 10 * cfg.newton_tol * scale
            max_r = ledger.max_abs_residual
            jumps = np.diff(ledger.energy)
            step_bound = cfg.record_stride * 10 * cfg.newton_tol * scale
            if traj.params.mu > 0:
                monotone = bool(np.all(jumps <= step_bound))
            else:
                drift = np.abs(ledger.energy - e0)
                monotone = bool(np.all(drift <= np.arange(len(drift)) * step_bound))
            results[name] = {
                "passed": bool(max_r <= bound and monotone),
                "max_abs_residual": max_r,
                "bound": bound,
                "energy_monotone": monotone,
            }
            continue
        try:
            if name == "inequality":
                rep = check_inequality(traj)
                results[name] = {
                    "passed": rep.passed,
                    "nu_hat": rep.nu_hat,
                    "t_at_inf": rep.t_at_inf,
                    "positive_fraction": rep.positive_fraction,
                    "n_samples": rep.n_samples,
                }
                continue
            fn = {
                "energy-decay": check_energy_decay,
                "solution-decay": check_solution_decay,
                "modified-energy-decay": check_modified_energy_decay,
            }[name]
            rep = fn(traj, window)
            results[name] = {
                "passed": rep.is_non_trending(),
                "slope": rep.slope,
                "theoretical_slope": rep.theoretical_slope,
                "intercept": rep.intercept,
                "envelope": rep.envelope,
                "window_envelopes": list(rep.window_envelopes),
                "window": [rep.t_lo, rep.t_hi],
                "n_samples": rep.n_samples,
                "n_clipped": rep.n_clipped,
            }
        except AnalysisError as exc:
            results[name] = {"passed": False, "error": str(exc)}
    return results


def _scheme_dict(scheme: SchemeConfig) -> dict:
    return {
        "dt": scheme.dt,
        "t_end": scheme.t_end,
        "newton_tol": scheme.newton_tol,
        "max_newton_iters": scheme.max_newton_iters,
        "record_stride": scheme.record_stride,
        "n_steps": scheme.n_steps,
    }


def _write_report(path: Path, report: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def execute_point(p, alpha, mu, init: State, scheme: SchemeConfig, checks, out_dir, window=None) -> PointResult:
    """Integrate one grid point, write its CSVs and report, and evaluate checks."""
    label = point_label(p, alpha, mu)
    out_dir = Path(out_dir)
    report = {
        "version": __version__,
        "params": {"p": p, "mu": mu, "alpha": alpha},
        "init": {"x0": init.x, "y0": init.y},
        "scheme": _scheme_dict(scheme),
    }
    try:
        params = DuffingParams(p, mu, alpha)
    except ParameterError as exc:
        report.update(status=INVALID, error=str(exc))
        return PointResult(label, p, alpha, mu, INVALID, report, error=str(exc))
    checks = parse_checks(checks)

    try:
        traj = integrate(params, scheme, init)
        ledger = build_ledger(traj)
    except (IntegrationError, NonFiniteError, AnalysisError) as exc:
        report.update(status=INTEGRATION_FAILED, error=str(exc))
        _try_write_report(out_dir, report)
        return PointResult(label, p, alpha, mu, INTEGRATION_FAILED, report, error=str(exc))

    results = run_checks(traj, ledger, checks, window)
    status = OK if all(r["passed"] for r in results.values()) else CHECK_FAILED
    report.update(
        status=status,
        checks=results,
        final={"t": float(traj.t[-1]), "x": float(traj.x[-1]), "y": float(traj.y[-1]),
               "E": float(ledger.energy[-1])},
        max_newton_iters_used=int(traj.newton_iters.max()),
    )
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(out_dir / "trajectory.csv", traj, ledger)
        write_ledger_csv(out_dir / "ledger.csv", ledger)
        _write_report(out_dir / "report.json", report)
    except OSError as exc:
        report.update(status=INVALID, error=f"cannot write outputs: {exc}")
        return PointResult(label, p, alpha, mu, INVALID, report, traj, str(exc))
    return PointResult(label, p, alpha, mu, status, report, traj)


def _try_write_report(out_dir: Path, report: dict) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_report(out_dir / "report.json", report)
    except OSError:
        pass


def execute_run(spec: RunSpec, window=None) -> PointResult:
    p = spec.params
    return execute_point(p.p, p.alpha, p.mu, spec.init, spec.scheme, spec.checks, spec.out, window)


def _point_worker(args):
    p, alpha, mu, init, scheme, checks, out_dir, window = args
    return execute_point(p, alpha, mu, init, scheme, checks, out_dir, window)


@dataclass(eq=False)
class SweepResult:
    spec: SweepSpec
    points: list[PointResult]
    comparison: dict
    plot_files: list[Path] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        codes = [pt.exit_code for pt in self.points]
        if not self.comparison.get("passed", True):
            codes.append(1)
        return max(codes, default=0)

    def point(self, p, alpha, mu) -> PointResult:
        for pt in self.points:
            if pt.p == p and float(pt.alpha) == float(alpha) and float(pt.mu) == float(mu):
                return pt
        raise KeyError((p, alpha, mu))


def _default_jobs(n_points: int) -> int:
    try:
        n_cpu = len(os.sched_getaffinity(0))
    except AttributeError:
        n_cpu = os.cpu_count() or 1
    return max(1, min(n_cpu, n_points))


def compare_orderings(points: list[PointResult], t_query: float) -> dict:
    """mu-ordering per (p, alpha) and alpha-ordering per (p, mu) among damped points."""
    good = [pt for pt in points if pt.trajectory is not None and pt.trajectory.params.mu > 0]
    mu_order, alpha_order = [], []
    passed = True
    by_pa, by_pm = {}, {}
    for pt in good:
        prm = pt.trajectory.params
        by_pa.setdefault((prm.p, prm.alpha), []).append(pt.trajectory)
        by_pm.setdefault((prm.p, prm.mu), []).append(pt.trajectory)
    for (p, alpha), trajs in sorted(by_pa.items()):
        if len(trajs) < 2:
            continue
        entries = compare_at_time(trajs, t_query)
        ok = is_strictly_increasing(entries, key=lambda e: e.params.mu)
        passed &= ok
        mu_order.append({
            "p": p, "alpha": alpha, "increasing_in_mu": ok,
            "energies": {f"{e.params.mu:g}": e.energy for e in sorted(entries, key=lambda e: e.params.mu)},
        })
    for (p, mu), trajs in sorted(by_pm.items()):
        if len(trajs) < 2:
            continue
        entries = compare_at_time(trajs, t_query)
        ok = is_strictly_increasing(entries, key=lambda e: -e.params.alpha)
        passed &= ok
        alpha_order.append({
            "p": p, "mu": mu, "decreasing_in_alpha": ok,
            "energies": {f"{e.params.alpha:g}": e.energy for e in sorted(entries, key=lambda e: e.params.alpha)},
        })
    return {"t_query": t_query, "passed": bool(passed), "mu_ordering": mu_order, "alpha_ordering": alpha_order}


def run_sweep(spec: SweepSpec, window=None) -> SweepResult:
    scheme = spec.scheme()
    grid = spec.grid()
    jobs = spec.jobs or _default_jobs(len(grid))
    spec.out.mkdir(parents=True, exist_ok=True)
    tasks = [
        (p, a, m, spec.init, scheme, spec.checks, spec.out / point_label(p, a, m), window)
        for p, a, m in grid
    ]
    if jobs == 1:
        points = [_point_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_point_worker, tasks))

    plot_files = []
    for p, alpha in itertools.product(spec.p_values, spec.alpha_values):
        row = [pt for pt in points if pt.p == p and pt.alpha == alpha and pt.trajectory is not None]
        if not row:
            continue
        cols = {"t": row[0].trajectory.t}
        for pt in row:
            tr = pt.trajectory
            cols[f"E_mu={float(pt.mu):g}"] = build_ledger(tr).energy
        path = spec.out / f"energy_p{p}_alpha{float(alpha):g}.dat"
        write_plot_data(path, cols, comments=[f"mechanical energy E(t), p={p} alpha={float(alpha):g}"])
        plot_files.append(path)

    comparison = compare_orderings(points, spec.t_end)
    comparison["points"] = {pt.label: pt.status for pt in points}
    _write_report(spec.out / "comparison.json", comparison)
    return SweepResult(spec, points, comparison, plot_files)


def reference_sweep_spec(out, jobs=None) -> SweepSpec:
    return SweepSpec(
        REFERENCE_P, REFERENCE_ALPHA, REFERENCE_MU, State(*REFERENCE_INIT), REFERENCE_DT, REFERENCE_T_END, Path(out),
        record_stride=CLI_RECORD_STRIDE, jobs=jobs, checks=("ledger", "inequality"),
    )


@dataclass(eq=False)
class FigureResult:
    sweep: SweepResult
    figure_files: list[Path]
    criteria: list[dict]

    @property
    def exit_code(self) -> int:
        code = self.sweep.exit_code
        if not all(c["passed"] for c in self.criteria):
            code = max(code, 1)
        return code


def reference_slope(p: int) -> float:
    return -(p + 1) / (p - 1)


def write_figure_data(sweep: SweepResult) -> list[Path]:
    """One log10 t / log10 E file per (p, alpha) panel with the t^(-(p+1)/(p-1)) reference line."""
    files = []
    out = sweep.spec.out
    for p, alpha in itertools.product(sweep.spec.p_values, sweep.spec.alpha_values):
        row = [pt for pt in sweep.points if pt.p == p and pt.alpha == alpha and pt.trajectory is not None]
        if not row:
            continue
        t = row[0].trajectory.t
        keep = t > 0
        log_t = np.log10(t[keep])
        cols = {"log10_t": log_t}
        for pt in row:
            e = build_ledger(pt.trajectory).energy[keep]
            cols[f"log10_E_mu={float(pt.mu):g}"] = np.log10(np.maximum(e, 1e-300))
        prm = row[0].trajectory.params
        e0 = energy(prm, sweep.spec.init)
        slope = reference_slope(p)
        cols["log10_reference"] = math.log10(e0) + slope * log_t
        path = out / f"figure_p{p}_alpha{float(alpha):g}.dat"
        write_plot_data(path, cols, comments=[
            f"log10 E(t) per damping, p={p} alpha={float(alpha):g}, x0={sweep.spec.init.x:g} y0={sweep.spec.init.y:g}",
            f"reference line E(0) * t^({slope:.17g})",
        ])
        files.append(path)
    return files


def evaluate_reference_criteria(sweep: SweepResult) -> list[dict]:
    """Criteria on the reference grid: discrete law, decay envelopes, inequality, orderings."""
    criteria = []

    def add(cid, text, fn):
        try:
            passed, detail = fn()
        except (KeyError, AnalysisError) as exc:
            passed, detail = False, f"not evaluated: {exc!r}"
        criteria.append({"id": cid, "criterion": text, "passed": bool(passed), "detail": detail})

    def traj(p, alpha, mu):
        pt = sweep.point(p, alpha, mu)
        if pt.trajectory is None:
            raise KeyError(f"{pt.label} has no trajectory ({pt.error})")
        return pt.trajectory

    def c1():
        r = build_ledger(traj(3, 1, 1)).max_abs_residual_until(100.0)
        return r <= 1e-8, f"max |E + D - E0| on [0, 100] = {r:.3e}"

    def c2():
        led = build_ledger(traj(3, 1, 0))
        mask = led.t <= 1000.0
        r = float(np.max(np.abs(led.energy[mask] - led.energy[0])))
        return r <= 1e-7, f"max |E - E0| on [0, 1000] = {r:.3e}"

    def c3():
        rep = check_energy_decay(traj(3, 1, 1), REFERENCE_TAIL)
        ok = -2.3 <= rep.slope <= -1.7 and rep.is_non_trending()
        return ok, f"slope {rep.slope:.4f}, sup E t^2 = {rep.envelope:.4g}, sub-window sups {_fmt_list(rep.window_envelopes)}"

    def c4():
        parts, ok = [], True
        for p in (5, 7):
            rep = check_energy_decay(traj(p, 1, 1), REFERENCE_TAIL)
            ok &= rep.is_non_trending()
            parts.append(f"p={p}: sup = {rep.envelope:.4g}, sub-window sups {_fmt_list(rep.window_envelopes)}")
        return ok, "; ".join(parts)

    def c5():
        rep = check_solution_decay(traj(3, 1, 1), REFERENCE_TAIL)
        return rep.is_non_trending(), f"sup env |x| t^(1/2) = {rep.envelope:.4g}, sub-window sups {_fmt_list(rep.window_envelopes)}"

    def c6():
        worst, ok = None, True
        for p, alpha, mu in sweep.spec.grid():
            if mu <= 0:
                continue
            rep = check_inequality(traj(p, alpha, mu))
            ok &= rep.passed
            if worst is None or rep.nu_hat < worst[0]:
                worst = (rep.nu_hat, point_label(p, alpha, mu), rep.positive_fraction)
        return ok, f"smallest nu_hat {worst[0]:.4g} at {worst[1]} (positive fraction {worst[2]:.2g})"

    cmp = sweep.comparison

    def c7():
        bad = [f"p={r['p']} alpha={r['alpha']:g}" for r in cmp["mu_ordering"] if not r["increasing_in_mu"]]
        return not bad and len(cmp["mu_ordering"]) > 0, "violations: " + (", ".join(bad) or "none")

    def c8():
        bad = [
            f"p={r['p']} mu={r['mu']:g} (E={r['energies']})"
            for r in cmp["alpha_ordering"] if not r["decreasing_in_alpha"]
        ]
        return not bad and len(cmp["alpha_ordering"]) > 0, "violations: " + (", ".join(bad) or "none")

    add(1, "discrete energy law, (3,1,1), T=100: max residual <= 1e-8", c1)
    add(2, "conservation at mu=0, (3,0,1), T=1000: max |E - E0| <= 1e-7", c2)
    add(3, "energy decay p=3: slope in [-2.3, -1.7], envelope non-trending", c3)
    add(4, "energy envelopes p=5, p=7 bounded over the tail", c4)
    add(5, "peak envelope of |x| bounded by C t^(-1/2), p=3", c5)
    add(6, "differential inequality: nu_hat > 0 for every damped grid point", c6)
    add(7, "energy at t=5000 strictly increasing in mu for every (p, alpha)", c7)
    add(8, "energy at t=5000 smaller for alpha=100 than alpha=1 for every (p, mu>0)", c8)
    return criteria


def _fmt_list(values) -> str:
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


def reproduce_figure(out, jobs=None) -> FigureResult:
    sweep = run_sweep(reference_sweep_spec(out, jobs), window=REFERENCE_TAIL)
    files = write_figure_data(sweep)
    criteria = evaluate_reference_criteria(sweep)
    _write_report(Path(out) / "criteria.json", {"criteria": criteria})
    return FigureResult(sweep, files, criteria)


"""Command-line front end: ``duffing-sp run | sweep | reproduce-figure``.

Exit codes: 0 success, 1 a check failed, 2 integration failed, 3 bad
configuration or I/O error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .files import parse_config
from .integrator import ConfigError, SchemeConfig
from .model import DuffingParams, NonFiniteError, ParameterError, State
from .runner import (
    CHECKS,
    EXIT_CODES,
    INVALID,
    RunSpec,
    SweepSpec,
    cli_record_stride,
    execute_run,
    reproduce_figure,
    run_sweep,
)

EXIT_OK, EXIT_CHECK, EXIT_INTEGRATION, EXIT_CONFIG = 0, 1, 2, 3

DEFAULTS = {
    "p": "3",
    "mu": "1",
    "alpha": "1",
    "x0": "2",
    "y0": "0",
    "dt": "0.01",
    "t_end": "5000",
    "newton_tol": "1e-12",
    "max_newton_iters": "50",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_common(sub):
    sub.add_argument("--config", type=Path, help="key=value file; command-line flags override it")
    sub.add_argument("--p")
    sub.add_argument("--mu")
    sub.add_argument("--alpha")
    sub.add_argument("--x0")
    sub.add_argument("--y0")
    sub.add_argument("--dt")
    sub.add_argument("--t-end", dest="t_end")
    sub.add_argument("--newton-tol", dest="newton_tol")
    sub.add_argument("--max-newton-iters", dest="max_newton_iters")
    sub.add_argument("--record-stride", dest="record_stride")
    sub.add_argument("--out")
    sub.add_argument("--checks", help=f"comma-separated subset of {', '.join(CHECKS)}, or 'all'")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="duffing-sp", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = subs.add_parser("run", help="integrate one parameter set")
    _add_common(run)
    sweep = subs.add_parser("sweep", help="integrate a grid; --p/--mu/--alpha take comma-separated lists")
    _add_common(sweep)
    sweep.add_argument("--jobs")
    fig = subs.add_parser("reproduce-figure", help="run the six-panel reference grid and write plot data")
    fig.add_argument("--out", default="figure")
    fig.add_argument("--jobs")
    return parser


def _settings(args) -> dict[str, str]:
    values = dict(DEFAULTS)
    if getattr(args, "config", None) is not None:
        try:
            values.update(parse_config(args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        values[key] = str(value)
    return values


def _num(values, key, kind=float):
    raw = values.get(key)
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be {'an integer' if kind is int else 'a number'}, got {raw!r}") from None


def _int_token(token: str, key: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {token!r}") from None
    if not value.is_integer():
        raise ConfigError(f"{key} must be an integer, got {token!r}")
    return int(value)


def _list(values, key, kind=float):
    raw = values.get(key, "")
    tokens = [tok.strip() for tok in str(raw).split(",") if tok.strip()]
    if not tokens:
        raise ConfigError(f"{key} list is empty")
    if kind is int:
        return tuple(_int_token(tok, key) for tok in tokens)
    try:
        return tuple(float(tok) for tok in tokens)
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of numbers, got {raw!r}") from None


def _scheme(values) -> SchemeConfig:
    dt = _num(values, "dt")
    t_end = _num(values, "t_end")
    stride = values.get("record_stride")
    stride = _num(values, "record_stride", int) if stride not in (None, "") else cli_record_stride(dt, t_end)
    return SchemeConfig(dt, t_end, _num(values, "newton_tol"), _num(values, "max_newton_iters", int), stride)


def _jobs(values):
    if values.get("jobs") in (None, ""):
        return None
    return _num(values, "jobs", int)


def run_spec_from_args(args) -> RunSpec:
    values = _settings(args)
    params = DuffingParams(_int_token(values["p"], "p"), _num(values, "mu"), _num(values, "alpha"))
    return RunSpec(
        params,
        State(_num(values, "x0"), _num(values, "y0")),
        _scheme(values),
        Path(values.get("out") or "run_output"),
        values.get("checks") or "ledger",
    )


def sweep_spec_from_args(args) -> SweepSpec:
    values = _settings(args)
    scheme = _scheme(values)
    return SweepSpec(
        _list(values, "p", int),
        _list(values, "alpha"),
        _list(values, "mu"),
        State(_num(values, "x0"), _num(values, "y0")),
        scheme.dt,
        scheme.t_end,
        Path(values.get("out") or "sweep_output"),
        newton_tol=scheme.newton_tol,
        max_newton_iters=scheme.max_newton_iters,
        record_stride=scheme.record_stride,
        jobs=_jobs(values),
        checks=values.get("checks") or "ledger",
    )


def _print_checks(label, report, stream):
    for name, result in report.get("checks", {}).items():
        verdict = "PASS" if result["passed"] else "FAIL"
        extra = ", ".join(
            f"{k}={v:.6g}" for k, v in result.items() if isinstance(v, float) and k != "passed"
        )
        print(f"{label} {name}: {verdict} {extra}", file=stream)


def cmd_run(args) -> int:
    spec = run_spec_from_args(args)
    result = execute_run(spec)
    if result.status == INVALID or result.error:
        print(f"error: {result.error}", file=sys.stderr)
    _print_checks(result.label, result.report, sys.stdout)
    print(f"{result.label}: {result.status} -> {spec.out}")
    return result.exit_code


def _summarize_sweep(result) -> None:
    for pt in result.points:
        if pt.error:
            print(f"{pt.label}: {pt.status}: {pt.error}", file=sys.stderr)
        _print_checks(pt.label, pt.report, sys.stdout)
    cmp = result.comparison
    for row in cmp["mu_ordering"]:
        verdict = "PASS" if row["increasing_in_mu"] else "FAIL"
        print(f"mu-ordering p={row['p']} alpha={row['alpha']:g}: {verdict}")
    for row in cmp["alpha_ordering"]:
        verdict = "PASS" if row["decreasing_in_alpha"] else "FAIL"
        print(f"alpha-ordering p={row['p']} mu={row['mu']:g}: {verdict}")


def cmd_sweep(args) -> int:
    spec = sweep_spec_from_args(args)
    result = run_sweep(spec)
    _summarize_sweep(result)
    return result.exit_code


def cmd_reproduce_figure(args) -> int:
    values = {"jobs": args.jobs}
    result = reproduce_figure(Path(args.out), jobs=_jobs(values))
    _summarize_sweep(result.sweep)
    for c in result.criteria:
        print(f"criterion {c['id']}: {'PASS' if c['passed'] else 'FAIL'}: {c['criterion']} -- {c['detail']}")
    for path in result.figure_files:
        print(f"wrote {path}")
    return result.exit_code


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "reproduce-figure": cmd_reproduce_figure}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (ConfigError, ParameterError, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


assert set(EXIT_CODES.values()) == {EXIT_OK, EXIT_CHECK, EXIT_INTEGRATION, EXIT_CONFIG}

if __name__ == "__main__":
    sys.exit(main())

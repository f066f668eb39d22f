"""Flat-file formats: trajectory/ledger CSV, key=value configs, plot data."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .analysis import EnergyLedger
from .integrator import Trajectory

TRAJECTORY_COLUMNS = (
    "t", "x", "y", "E", "modified_E", "cumulative_dissipation", "identity_residual", "newton_iters",
)
LEDGER_COLUMNS = ("t", "E", "modified_E", "cumulative_dissipation", "identity_residual")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_rows(path: Path, header, columns, int_columns=()):
    lines = [",".join(header)]
    cols = [c.tolist() for c in columns]
    for row in zip(*cols):
        lines.append(",".join(str(v) if i in int_columns else _fmt(v) for i, v in enumerate(row)))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def write_trajectory_csv(path, traj: Trajectory, ledger: EnergyLedger) -> None:
    _write_rows(
        Path(path),
        TRAJECTORY_COLUMNS,
        [traj.t, traj.x, traj.y, ledger.energy, ledger.modified_energy, ledger.dissipation,
         ledger.residual, traj.newton_iters],
        int_columns={7},
    )


def write_ledger_csv(path, ledger: EnergyLedger) -> None:
    _write_rows(
        Path(path),
        LEDGER_COLUMNS,
        [ledger.t, ledger.energy, ledger.modified_energy, ledger.dissipation, ledger.residual],
    )


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    out = {}
    for i, name in enumerate(header):
        col = [r[i] for r in rows]
        if name == "newton_iters":
            out[name] = np.array([int(v) for v in col], dtype=np.int64)
        else:
            out[name] = np.array([float(v) for v in col])
    return out


def write_plot_data(path, columns: dict[str, np.ndarray], comments=()) -> None:
    """Whitespace-separated columns, '#' comment lines first, last comment names the columns."""
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float).tolist() for n in names]
    lines = [f"# {c}" for c in comments]
    lines.append("# " + " ".join(names))
    for row in zip(*data):
        lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_plot_data(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    names = comments[-1][1:].split()
    rows = [ln.split() for ln in lines if ln and not ln.startswith("#")]
    return {n: np.array([float(r[i]) for r in rows]) for i, n in enumerate(names)}


def parse_config(path) -> dict[str, str]:
    """Read `key = value` lines; blank lines and '#' comments are ignored."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            values[key] = value.strip()
    return values


def write_config(path, values: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        for k, v in values.items():
            fh.write(f"{k} = {v}\n")

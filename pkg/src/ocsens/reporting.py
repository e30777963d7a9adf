"""Deterministic file outputs for the experiment runner.

Every artifact is reproducible byte for byte from the same configuration:
floats are written with 17 significant digits, JSON keys are sorted, and
metadata headers carry the configuration hash instead of timestamps.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from numpy.typing import NDArray

from .collocation import uniform_grid
from .problem import Trajectory
from . import hypersonic

DENSE_SAMPLES = 201

HYPERSONIC_HEADER = ["t", "x1", "x2", "v", "gamma", "alpha", "q", "delta"]
TOY_HEADER = ["t", "x", "u"]
STUDY_HEADER = ["eps", "estimate", "true_error", "bound"]


def format_float(value: float) -> str:
    return "%.17g" % float(value)


def metadata_lines(meta: Mapping[str, object]) -> list[str]:
    """Comment block placed at the top of every CSV artifact."""
    return [f"# {key}: {meta[key]}" for key in meta]


def write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[float]],
    meta: Mapping[str, object],
) -> None:
    lines = metadata_lines(meta)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_float(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, payload: Mapping[str, object]) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def dense_times(num: int = DENSE_SAMPLES) -> NDArray:
    return np.linspace(0.0, 1.0, num)


def hypersonic_rows(traj: Trajectory, scheme: str) -> list[list[float]]:
    """Dense samples of a flight trajectory in kg/km/s and seconds.

    The time column is physical (duration times normalized time); state
    samples held in another unit scheme are converted on the way out.
    """
    convert = hypersonic.state_scale("kgkms") / hypersonic.state_scale(scheme)
    duration = float(traj.parameters[0])
    rows = []
    for tau in dense_times():
        x = traj.state(float(tau)) * convert
        u = traj.control(float(tau))
        rows.append([duration * tau, *x, u[0]])
    return rows


def toy_rows(traj: Trajectory) -> list[list[float]]:
    rows = []
    for tau in dense_times():
        rows.append([float(tau), float(traj.state(float(tau))[0]), float(traj.control(float(tau))[0])])
    return rows


# -- full-precision reference store ------------------------------------------

def trajectory_payload(traj: Trajectory, scheme: str, extra: Mapping[str, object]) -> dict:
    """Reference solution as a JSON-safe record in kg/km/s units.

    Storage is canonical so runs under different unit schemes can share
    one reference file.
    """
    state_ratio = hypersonic.state_scale("kgkms") / hypersonic.state_scale(scheme)
    length_ratio = state_ratio[0]
    payload = {
        "intervals": traj.grid.num_intervals,
        "nodes": traj.grid.nodes_per_interval,
        "states": (traj.states * state_ratio).tolist(),
        "controls": traj.controls.tolist(),
        "parameters": traj.parameters.tolist(),
    }
    if traj.costates is not None:
        payload["costates"] = (traj.costates * (length_ratio / state_ratio)).tolist()
    payload.update(extra)
    return payload


def toy_trajectory_payload(traj: Trajectory, extra: Mapping[str, object]) -> dict:
    payload = {
        "intervals": traj.grid.num_intervals,
        "nodes": traj.grid.nodes_per_interval,
        "states": traj.states.tolist(),
        "controls": traj.controls.tolist(),
        "parameters": traj.parameters.tolist(),
    }
    if traj.costates is not None:
        payload["costates"] = traj.costates.tolist()
    payload.update(extra)
    return payload


def load_trajectory(payload: Mapping[str, object], scheme: Optional[str]) -> Trajectory:
    """Rebuild a stored trajectory, converting into the requested scheme.

    scheme=None skips unit handling (the toy problem is dimensionless).
    """
    grid = uniform_grid(int(payload["intervals"]), int(payload["nodes"]))
    states = np.asarray(payload["states"], dtype=float)
    controls = np.asarray(payload["controls"], dtype=float)
    costates = payload.get("costates")
    if costates is not None:
        costates = np.asarray(costates, dtype=float)
    if scheme is not None:
        ratio = hypersonic.state_scale(scheme) / hypersonic.state_scale("kgkms")
        states = states * ratio
        if costates is not None:
            costates = costates * (ratio[0] / ratio)
    return Trajectory(
        grid=grid,
        states=states,
        controls=controls,
        parameters=np.asarray(payload["parameters"], dtype=float),
        costates=costates,
    )


# -- figures -------------------------------------------------------------------

_TRAJ_PANELS = {
    "hypersonic": [("x1", 1, "downrange [km]"), ("x2", 2, "altitude [km]"), ("delta", 7, "elevon [rad]")],
    "toy": [("x", 1, "state"), ("u", 2, "control")],
}


def trajectory_figure(
    path: Path,
    series: Mapping[str, list[list[float]]],
    kind: str,
    title: str,
) -> None:
    """Stacked panels of selected columns for one or more trajectories."""
    panels = _TRAJ_PANELS[kind]
    fig, axes = plt.subplots(len(panels), 1, figsize=(7.0, 2.4 * len(panels)), sharex=True)
    axes = np.atleast_1d(axes)
    styles = ["-", "--", ":"]
    for ax, (_, col, label) in zip(axes, panels):
        for style, (name, rows) in zip(styles, series.items()):
            data = np.asarray(rows)
            ax.plot(data[:, 0], data[:, col], style, label=name)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="best")
    axes[0].set_title(title)
    axes[-1].set_xlabel("time [s]" if kind == "hypersonic" else "time")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def study_figure(path: Path, table: Sequence[Sequence[float]], title: str) -> None:
    """Estimate, true error, and bound against the perturbation size."""
    data = np.asarray(table, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(data[:, 0], data[:, 1], "o-", label="estimate")
    ax.plot(data[:, 0], data[:, 2], "s-", label="true error")
    ax.plot(data[:, 0], data[:, 3], "^-", label="bound")
    ax.set_xlabel("model perturbation size")
    ax.set_ylabel("quantity-of-interest error")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)

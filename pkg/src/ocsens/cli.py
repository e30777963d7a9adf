"""Experiment runner for the hypersonic surrogate-error study.

Four commands: solve the reference problem, predict the solution shift
caused by replacing the surrogate aerodynamics with the scaled truth
model, tabulate quantity-of-interest error estimates against re-solved
truth values with their worst-case bounds, and run the package self
checks. Configuration lives in a JSON file mirrored by RunConfig; outputs
are deterministic CSV, JSON, and PNG files.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from . import hypersonic, reporting
from .adjoint import (
    ErrorBands,
    lp_worst_case,
    qoi_directional_derivative,
    qoi_error_bound,
    qoi_error_estimate,
    solve_adjoint_system,
)
from .collocation import uniform_grid
from .derivative_check import check_derivatives
from .problem import (
    CallableComponent,
    CombinedComponent,
    ComponentFunction,
    Dims,
    OcpProblem,
    ProblemFunctions,
    QoiFunctions,
    Trajectory,
    pack_y,
)
from .sensitivity import (
    PerturbationData,
    assemble_lq_data,
    forward_qoi_derivative,
    sample_perturbation,
    solve_sensitivity,
)
from .solver import SolverConfig, solve
from .transcription import Nlp, transcribe

PROBLEMS = ("max-downrange", "tracking", "toy-lq")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ConfigError(Exception):
    """Configuration file or command-line input is unusable."""


class SolveFailure(Exception):
    """A required solve did not reach the optimality tolerance."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved run settings; the JSON config file mirrors these fields.

    The grid is given in the file as {"intervals": ..., "nodes": ...};
    everything else maps one key to one field.
    """

    problem: str = "max-downrange"
    intervals: int = 32
    nodes: int = 4
    kkt_tolerance: float = 1e-8
    max_iterations: int = 400
    eps: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04, 0.05)
    units: str = "kgkms"
    out_dir: str = "runs"
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.intervals < 1 or self.nodes < 1:
            raise ConfigError("grid counts must be at least 1")
        if not self.kkt_tolerance > 0.0:
            raise ConfigError("kkt_tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if any(not np.isfinite(e) or e < 0.0 for e in self.eps):
            raise ConfigError("eps entries must be finite and nonnegative")
        try:
            scheme = hypersonic.normalize_scheme(self.units)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        return replace(self, units=scheme, eps=tuple(float(e) for e in self.eps))

    def digest(self) -> str:
        record = {f.name: getattr(self, f.name) for f in fields(self)}
        record["eps"] = list(self.eps)
        canon = json.dumps(record, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()

    def metadata(self, command: str) -> dict:
        return {
            "command": command,
            "config_hash": self.digest(),
            "problem": self.problem,
            "grid": f"{self.intervals}x{self.nodes}",
            "kkt_tolerance": reporting.format_float(self.kkt_tolerance),
            "max_iterations": self.max_iterations,
            "units": self.units,
            "eps": ",".join("%g" % e for e in self.eps),
            "seed": self.seed,
        }


_GRID_KEYS = {"intervals", "nodes"}
_FILE_KEYS = {
    "problem",
    "grid",
    "kkt_tolerance",
    "max_iterations",
    "eps",
    "units",
    "out_dir",
    "seed",
}


def load_config(path: Path) -> RunConfig:
    """Parse the JSON config file; unknown keys are rejected loudly."""
    try:
        raw = json.loads(path.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = sorted(set(raw) - _FILE_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; allowed keys are {sorted(_FILE_KEYS)}")
    values: dict = {}
    try:
        if "problem" in raw:
            values["problem"] = str(raw["problem"])
        if "grid" in raw:
            grid = raw["grid"]
            if not isinstance(grid, dict) or set(grid) - _GRID_KEYS:
                raise ConfigError(
                    f"grid must be an object with keys {sorted(_GRID_KEYS)}, got {grid!r}"
                )
            if "intervals" in grid:
                values["intervals"] = int(grid["intervals"])
            if "nodes" in grid:
                values["nodes"] = int(grid["nodes"])
        if "kkt_tolerance" in raw:
            values["kkt_tolerance"] = float(raw["kkt_tolerance"])
        if "max_iterations" in raw:
            values["max_iterations"] = int(raw["max_iterations"])
        if "eps" in raw:
            entries = raw["eps"] if isinstance(raw["eps"], list) else [raw["eps"]]
            values["eps"] = tuple(float(e) for e in entries)
        if "units" in raw:
            values["units"] = str(raw["units"])
        if "out_dir" in raw:
            values["out_dir"] = str(raw["out_dir"])
        if "seed" in raw:
            values["seed"] = int(raw["seed"])
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad value in config {path}: {err}") from None
    return RunConfig(**values)


# -- the dimensionless check problem ------------------------------------------

_TOY_DIMS = Dims(n_x=1, n_u=1, n_p=0, n_g=1)


def toy_component(value: float) -> CallableComponent:
    """Constant scalar model; the surrogate uses 0, the truth eps."""
    return CallableComponent(
        n_g=1,
        eval_fn=lambda t, y: np.array([value]),
        jac_fn=lambda t, y: np.zeros((1, y.size)),
        hess_fn=lambda t, y: np.zeros((1, y.size, y.size)),
    )


def build_toy_lq(model: Optional[ComponentFunction] = None) -> OcpProblem:
    """Scalar regulator x' = u + g with quadratic cost and x(1) as QoI.

    Linear-quadratic throughout, so sensitivity predictions are exact and
    every study column can be checked against closed forms.
    """
    funcs = ProblemFunctions(
        dynamics=lambda t, y, g: np.array([y[1] + g[0]]),
        dynamics_jac=lambda t, y, g: np.array([[0.0, 1.0, 1.0]]),
        dynamics_hess=lambda t, y, g: np.zeros((1, 3, 3)),
        running_cost=lambda t, y, g: 0.5 * (y[0] ** 2 + y[1] ** 2),
        running_cost_grad=lambda t, y, g: np.array([y[0], y[1], 0.0]),
        running_cost_hess=lambda t, y, g: np.diag([1.0, 1.0, 0.0]),
        terminal_cost=lambda x, p: 0.0,
        terminal_cost_grad=lambda x, p: np.zeros(1),
        terminal_cost_hess=lambda x, p: np.zeros((1, 1)),
    )
    qoi = QoiFunctions(
        terminal=lambda x, p: float(x[0]),
        terminal_grad=lambda x, p: np.array([1.0]),
    )
    return OcpProblem(
        dims=_TOY_DIMS,
        horizon=(0.0, 1.0),
        x0=np.array([1.0]),
        funcs=funcs,
        component=model if model is not None else toy_component(0.0),
        qoi=qoi,
    )


# -- problem adapters ----------------------------------------------------------


class _HypersonicAdapter:
    """Shared plumbing for the flight problems under one unit scheme."""

    kind = "hypersonic"
    header = reporting.HYPERSONIC_HEADER

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.scheme = cfg.units
        self.grid = uniform_grid(cfg.intervals, cfg.nodes)
        self.qoi = hypersonic.downrange_qoi()
        # converts scheme lengths into the reported km
        self.length_out = float(
            hypersonic.state_scale("kgkms")[0] / hypersonic.state_scale(self.scheme)[0]
        )

    def surrogate(self) -> ComponentFunction:
        return hypersonic.surrogate_aero()

    def truth(self, eps: float) -> ComponentFunction:
        return hypersonic.true_aero(eps)

    def direction(self, eps: float) -> ComponentFunction:
        return CombinedComponent([(1.0, self.truth(eps)), (-1.0, self.surrogate())])

    def solve_reference(self) -> tuple[Trajectory, "object"]:
        problem = hypersonic.build_max_downrange(self.scheme)
        nlp = transcribe(problem, self.grid)
        config = SolverConfig(
            kkt_tolerance=self.cfg.kkt_tolerance,
            max_iterations=self.cfg.max_iterations,
            variable_scaling=hypersonic.downrange_scaling(nlp, self.scheme),
        )
        sol = solve(nlp, hypersonic.max_downrange_guess(nlp), config)
        return nlp.unpack(sol.primal, sol.multipliers), sol

    def reference_payload(self, traj: Trajectory, extra: dict) -> dict:
        return reporting.trajectory_payload(traj, self.scheme, extra)

    def load_reference(self, out: Path) -> Trajectory:
        path = out / "reference.json"
        if not path.exists():
            raise ConfigError(f"no stored reference at {path}; run solve-reference first")
        payload = json.loads(path.read_text())
        traj = reporting.load_trajectory(payload, self.scheme)
        if (
            traj.grid.num_intervals != self.cfg.intervals
            or traj.grid.nodes_per_interval != self.cfg.nodes
        ):
            raise ConfigError(
                f"stored reference uses grid {traj.grid.num_intervals}x"
                f"{traj.grid.nodes_per_interval}, the run asks for "
                f"{self.cfg.intervals}x{self.cfg.nodes}"
            )
        return traj

    def tracking_nlp(self, reference: Trajectory, model: Optional[ComponentFunction] = None) -> Nlp:
        problem = hypersonic.build_tracking(reference, self.scheme, model=model)
        return transcribe(problem, self.grid)

    def study_solver_config(self) -> SolverConfig:
        return SolverConfig(
            kkt_tolerance=self.cfg.kkt_tolerance, max_iterations=self.cfg.max_iterations
        )

    def rows(self, traj: Trajectory) -> list[list[float]]:
        return reporting.hypersonic_rows(traj, self.scheme)

    def duration(self, traj: Trajectory) -> float:
        return float(traj.parameters[0])

    def qoi_value(self, traj: Trajectory) -> float:
        """Final downrange in km regardless of the solve scheme."""
        return float(traj.states[-1, 0]) * self.length_out

    def qoi_out_scale(self) -> float:
        return self.length_out


class _ToyAdapter:
    """The dimensionless regulator run through the same command surface."""

    kind = "toy"
    header = reporting.TOY_HEADER

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.grid = uniform_grid(cfg.intervals, cfg.nodes)
        self.qoi = build_toy_lq().qoi

    def surrogate(self) -> ComponentFunction:
        return toy_component(0.0)

    def truth(self, eps: float) -> ComponentFunction:
        return toy_component(eps)

    def direction(self, eps: float) -> ComponentFunction:
        return toy_component(eps)

    def solve_reference(self) -> tuple[Trajectory, "object"]:
        nlp = transcribe(build_toy_lq(), self.grid)
        sol = solve(nlp, nlp.constant_guess(), self.study_solver_config())
        return nlp.unpack(sol.primal, sol.multipliers), sol

    def reference_payload(self, traj: Trajectory, extra: dict) -> dict:
        return reporting.toy_trajectory_payload(traj, extra)

    def load_reference(self, out: Path) -> Trajectory:
        path = out / "reference.json"
        if not path.exists():
            raise ConfigError(f"no stored reference at {path}; run solve-reference first")
        return reporting.load_trajectory(json.loads(path.read_text()), None)

    def tracking_nlp(self, reference: Trajectory, model: Optional[ComponentFunction] = None) -> Nlp:
        return transcribe(build_toy_lq(model), self.grid)

    def study_solver_config(self) -> SolverConfig:
        return SolverConfig(
            kkt_tolerance=self.cfg.kkt_tolerance, max_iterations=self.cfg.max_iterations
        )

    def rows(self, traj: Trajectory) -> list[list[float]]:
        return reporting.toy_rows(traj)

    def duration(self, traj: Trajectory) -> float:
        return 1.0

    def qoi_value(self, traj: Trajectory) -> float:
        return float(traj.states[-1, 0])

    def qoi_out_scale(self) -> float:
        return 1.0


def _adapter(cfg: RunConfig):
    if cfg.problem == "toy-lq":
        return _ToyAdapter(cfg)
    return _HypersonicAdapter(cfg)


# -- shared command plumbing ---------------------------------------------------


def _report(cfg: RunConfig, command: str, sol, duration: float, extra: dict) -> dict:
    payload = {
        "command": command,
        "config_hash": cfg.digest(),
        "problem": cfg.problem,
        "grid": {"intervals": cfg.intervals, "nodes": cfg.nodes},
        "kkt_tolerance": cfg.kkt_tolerance,
        "max_iterations": cfg.max_iterations,
        "units": cfg.units,
        "status": sol.status,
        "objective": sol.objective,
        "kkt_residual": sol.kkt_residual,
        "complementarity": sol.complementarity,
        "iterations": sol.iterations,
        "duration_T": duration,
    }
    payload.update(extra)
    return payload


def _require_optimal(sol, what: str) -> None:
    if sol.status != "optimal":
        raise SolveFailure(
            f"{what} solve stopped with status {sol.status!r} after "
            f"{sol.iterations} iterations (KKT residual {sol.kkt_residual:.3e})"
        )


def _study_base(cfg: RunConfig, out: Path, adapter):
    """Solve the bound-free study problem and expand it to second order.

    For the flight study this is the tracking problem around the stored
    reference; the toy problem is its own study problem. Returns the
    expansion and the solved base trajectory.
    """
    if adapter.kind == "toy":
        nlp = transcribe(build_toy_lq(), adapter.grid)
        start = nlp.constant_guess()
    else:
        reference = adapter.load_reference(out)
        nlp = adapter.tracking_nlp(reference)
        start = nlp.pack(reference)
    sol = solve(nlp, start, adapter.study_solver_config())
    _require_optimal(sol, "study base")
    lq = assemble_lq_data(nlp, sol)
    base = lq.base
    adj = solve_adjoint_system(lq, adapter.qoi)
    return nlp, sol, lq, adj, base


def _truth_trajectories(cfg: RunConfig, adapter, base: Trajectory, eps_list: Sequence[float]):
    """Re-solve the study problem under the truth model for each eps.

    Problems are built sequentially (the symbolic code generation is not
    thread-safe); the independent solves run concurrently.
    """
    nlps = [adapter.tracking_nlp(base, model=adapter.truth(e)) for e in eps_list]
    config = adapter.study_solver_config()

    def run(nlp: Nlp):
        sol = solve(nlp, nlp.pack(base), config)
        _require_optimal(sol, "truth re-solve")
        return nlp.unpack(sol.primal, sol.multipliers), sol

    if len(nlps) <= 1:
        return [run(nlp) for nlp in nlps]
    with ThreadPoolExecutor(max_workers=min(4, len(nlps))) as pool:
        return list(pool.map(run, nlps))


def _predicted_trajectory(base: Trajectory, delta) -> Trajectory:
    return Trajectory(
        grid=base.grid,
        states=base.states + delta.dx,
        controls=base.controls + delta.du,
        parameters=base.parameters + delta.dp,
    )


def _eps_tag(eps: float) -> str:
    return "eps%g" % eps


# -- commands -------------------------------------------------------------------


def cmd_solve_reference(cfg: RunConfig, out: Path, args) -> int:
    adapter = _adapter(cfg)
    meta = cfg.metadata("solve-reference")
    if cfg.problem == "tracking":
        reference = adapter.load_reference(out)
        nlp = adapter.tracking_nlp(reference)
        sol = solve(nlp, nlp.pack(reference), adapter.study_solver_config())
        traj = nlp.unpack(sol.primal, sol.multipliers)
        stem = "tracking"
    else:
        traj, sol = adapter.solve_reference()
        stem = "reference"
    duration = adapter.duration(traj)
    report = _report(cfg, "solve-reference", sol, duration, {"qoi": adapter.qoi_value(traj)})
    reporting.write_json(out / f"{stem}_report.json", report)
    if sol.status != "optimal":
        raise SolveFailure(
            f"{stem} solve stopped with status {sol.status!r}; "
            f"report retained at {out / (stem + '_report.json')}"
        )
    rows = adapter.rows(traj)
    reporting.write_csv(out / f"{stem}_trajectory.csv", adapter.header, rows, meta)
    reporting.trajectory_figure(
        out / f"{stem}_trajectory.png", {stem: rows}, adapter.kind, f"{cfg.problem} solution"
    )
    if cfg.problem != "tracking":
        payload = adapter.reference_payload(
            traj,
            {"config_hash": cfg.digest(), "objective": sol.objective, "kkt_residual": sol.kkt_residual},
        )
        reporting.write_json(out / "reference.json", payload)
    print(
        f"{stem}: status={sol.status} iterations={sol.iterations} "
        f"kkt={sol.kkt_residual:.3e} objective={sol.objective:.9g} duration_T={duration:.6g}"
    )
    return EXIT_OK


def cmd_sensitivity_predict(cfg: RunConfig, out: Path, args) -> int:
    adapter = _adapter(cfg)
    meta = cfg.metadata("sensitivity-predict")
    _, _, lq, _, base = _study_base(cfg, out, adapter)
    base_rows = adapter.rows(base)
    columns = adapter.header[1:]
    truths = _truth_trajectories(cfg, adapter, base, cfg.eps)
    summary: dict = {"config_hash": cfg.digest(), "eps": {}}
    for eps, (truth_traj, truth_sol) in zip(cfg.eps, truths):
        pert = sample_perturbation(base, adapter.direction(eps))
        delta = solve_sensitivity(lq, pert)
        predicted = _predicted_trajectory(base, delta)
        pred_rows = adapter.rows(predicted)
        truth_rows = adapter.rows(truth_traj)
        tag = _eps_tag(eps)
        for name, rows in (("reference", base_rows), ("predicted", pred_rows), ("truth", truth_rows)):
            reporting.write_csv(out / f"predict_{tag}_{name}.csv", adapter.header, rows, meta)
        reporting.trajectory_figure(
            out / f"predict_{tag}.png",
            {"reference": base_rows, "predicted": pred_rows, "truth": truth_rows},
            adapter.kind,
            f"{cfg.problem} model perturbation {eps:g}",
        )
        ref_arr, pred_arr, truth_arr = (
            np.asarray(base_rows),
            np.asarray(pred_rows),
            np.asarray(truth_rows),
        )
        dev_pred = np.max(np.abs(pred_arr - truth_arr), axis=0)
        dev_ref = np.max(np.abs(ref_arr - truth_arr), axis=0)
        summary["eps"][("%g" % eps)] = {
            "predicted_vs_truth": dict(zip(columns, dev_pred[1:].tolist())),
            "reference_vs_truth": dict(zip(columns, dev_ref[1:].tolist())),
            "duration_truth": adapter.duration(truth_traj),
            "iterations_truth": truth_sol.iterations,
        }
        print(
            f"eps={eps:g}: max|predicted-truth|={np.max(dev_pred[1:]):.6g} "
            f"max|reference-truth|={np.max(dev_ref[1:]):.6g}"
        )
    reporting.write_json(out / "predict_summary.json", summary)
    return EXIT_OK


def cmd_qoi_study(cfg: RunConfig, out: Path, args) -> int:
    adapter = _adapter(cfg)
    meta = cfg.metadata("qoi-study")
    _, _, lq, adj, base = _study_base(cfg, out, adapter)
    q_base = adapter.qoi_value(base)
    scale = adapter.qoi_out_scale()
    truths = _truth_trajectories(cfg, adapter, base, cfg.eps)
    table = []
    for eps, (truth_traj, truth_sol) in zip(cfg.eps, truths):
        # the estimate direction is surrogate minus truth
        pert_err = sample_perturbation(base, adapter.direction(eps)).scaled(-1.0)
        estimate = qoi_error_estimate(lq, adj, pert_err) * scale
        bands = ErrorBands.from_perturbation(pert_err)
        bound = qoi_error_bound(lq, adj, bands, adapter.qoi) * scale
        true_error = abs(adapter.qoi_value(truth_traj) - q_base)
        table.append([eps, estimate, true_error, bound])
        print(f"eps={eps:g}: estimate={estimate:.9g} true={true_error:.9g} bound={bound:.9g}")
    reporting.write_csv(out / "qoi_study.csv", reporting.STUDY_HEADER, table, meta)
    reporting.study_figure(out / "qoi_study.png", table, f"{cfg.problem} error study")
    return EXIT_OK


# -- self checks -----------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: float
    tolerance: float
    detail: str = ""


def _check_quadrature() -> tuple[list[CheckResult], list[str]]:
    lines = ["quadrature and differentiation exactness (single interval on [0, 1]):"]
    worst_q = 0.0
    worst_d = 0.0
    for n in range(2, 9):
        grid = uniform_grid(1, n)
        tau = grid.node_times
        w = grid.node_weights
        q_err = max(
            abs(float(w @ tau**k) - 1.0 / (k + 1)) for k in range(0, 2 * n - 1)
        )
        support = grid.support_times
        diff = grid.diff_matrices[0]
        d_err = float(np.max(np.abs(diff @ np.ones_like(support))))
        for k in range(1, n):
            d_err = max(
                d_err, float(np.max(np.abs(diff @ support**k - k * tau ** (k - 1))))
            )
        worst_q = max(worst_q, q_err)
        worst_d = max(worst_d, d_err)
        lines.append(f"  n={n}: quadrature {q_err:.3e} (degree <= {2 * n - 2}), "
                     f"differentiation {d_err:.3e} (degree <= {n - 1})")
    return (
        [
            CheckResult("quadrature-exactness", worst_q < 1e-12, worst_q, 1e-12),
            CheckResult("differentiation-exactness", worst_d < 1e-12, worst_d, 1e-12),
        ],
        lines,
    )


def _exponential_problem() -> OcpProblem:
    funcs = ProblemFunctions(
        dynamics=lambda t, y, g: np.array([g[0]]),
        dynamics_jac=lambda t, y, g: np.array([[0.0, 1.0]]),
        dynamics_hess=lambda t, y, g: np.zeros((1, 2, 2)),
        running_cost=lambda t, y, g: 0.0,
        running_cost_grad=lambda t, y, g: np.zeros(2),
        running_cost_hess=lambda t, y, g: np.zeros((2, 2)),
        terminal_cost=lambda x, p: 0.0,
        terminal_cost_grad=lambda x, p: np.zeros(1),
        terminal_cost_hess=lambda x, p: np.zeros((1, 1)),
    )
    identity = CallableComponent(
        n_g=1,
        eval_fn=lambda t, y: np.array([y[0]]),
        jac_fn=lambda t, y: np.array([[1.0]]),
        hess_fn=lambda t, y: np.zeros((1, 1, 1)),
    )
    return OcpProblem(
        dims=Dims(n_x=1, n_u=0, n_p=0, n_g=1),
        horizon=(0.0, 1.0),
        x0=np.array([1.0]),
        funcs=funcs,
        component=identity,
    )


def _exponential_error(intervals: int, nodes: int) -> float:
    nlp = transcribe(_exponential_problem(), uniform_grid(intervals, nodes))
    sol = solve(nlp, nlp.constant_guess())
    if sol.status != "optimal":
        return float("inf")
    traj = nlp.unpack(sol.primal, sol.multipliers)
    return abs(float(traj.states[-1, 0]) - float(np.e))


def _check_transcription() -> list[CheckResult]:
    datum = _exponential_error(4, 5)
    # 3 nodes keeps the halving chain above roundoff so the convergence
    # rate is measurable; 5 nodes is already exact to machine precision
    chain = [_exponential_error(k, 3) for k in (1, 2, 4, 8)]
    gains = [big / small for big, small in zip(chain, chain[1:])]
    return [
        CheckResult("ode-transcription", datum < 1e-8, datum, 1e-8),
        CheckResult(
            "ode-mesh-refinement",
            min(gains) >= 10.0,
            min(gains),
            10.0,
            "error chain " + " -> ".join(f"{e:.3e}" for e in chain) + " on 1,2,4,8 x3 grids",
        ),
    ]


def _check_nlp_derivatives(seed: int, inject: Optional[str]) -> CheckResult:
    nlp = transcribe(build_toy_lq(), uniform_grid(2, 3))
    rng = np.random.default_rng(seed)
    w = nlp.constant_guess() + 0.1 * rng.standard_normal(nlp.layout.num_vars)

    def fn(point: NDArray):
        jac = nlp.jacobian(point).toarray()
        if inject == "jacobian":
            jac = jac.copy()
            jac[1, 0] += 1e-3
        return nlp.constraints(point), jac

    report = check_derivatives(fn, w, fd_step=1e-6, flag_tol=1e-6)
    if report.flagged:
        row, col, dev = max(report.flagged, key=lambda entry: entry[2])
        detail = f"largest mismatch at constraint row {row}, variable column {col}"
        return CheckResult("constraint-jacobian", False, dev, 1e-6, detail)
    return CheckResult("constraint-jacobian", True, report.jacobian_deviation, 1e-6)


def _check_flight_dynamics(seed: int) -> list[CheckResult]:
    model = hypersonic.surrogate_aero()
    # aero polynomials have no third derivatives, so central differences
    # are exact and the comparison is direct
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        alpha, delta = rng.uniform(-0.3, 0.3, size=2)
        y = np.zeros(8)
        y[hypersonic.ALPHA_INDEX] = alpha
        y[hypersonic.DELTA_INDEX] = delta
        jac = model.jac_y(0.5, y)
        fd = np.zeros_like(jac)
        h = 1e-6
        for j in (hypersonic.ALPHA_INDEX, hypersonic.DELTA_INDEX):
            yp, ym = y.copy(), y.copy()
            yp[j] += h
            ym[j] -= h
            fd[:, j] = (model.eval(0.5, yp) - model.eval(0.5, ym)) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(jac - fd))))
    results = [CheckResult("aero-derivatives", worst < 1e-8, worst, 1e-8)]

    problem = hypersonic.build_max_downrange("kgkms")
    dims = problem.dims
    tau = 0.3
    y0 = pack_y(hypersonic.initial_state("kgkms"), np.array([0.05]), np.array([2000.0]))
    direction = rng.standard_normal(dims.n_y)
    direction /= float(np.linalg.norm(direction))

    def value(y: NDArray) -> NDArray:
        return problem.funcs.dynamics(tau, y, problem.component.eval(tau, y))

    g0 = problem.component.eval(tau, y0)
    full_jac = problem.funcs.dynamics_jac(tau, y0, g0)
    analytic = full_jac[:, : dims.n_y] + full_jac[:, dims.n_y :] @ problem.component.jac_y(tau, y0)
    remainders = []
    for h in (1e-3, 5e-4):
        slope = (value(y0 + h * direction) - value(y0 - h * direction)) / (2.0 * h)
        remainders.append(float(np.linalg.norm(slope - analytic @ direction)))
    ratio = remainders[0] / remainders[1] if remainders[1] > 0 else float("inf")
    results.append(
        CheckResult(
            "dynamics-taylor-ratio",
            bool(abs(ratio - 4.0) <= 1.0),
            ratio,
            4.0,
            "remainder contraction when the probe step halves",
        )
    )
    return results


def _solved_toy():
    nlp = transcribe(build_toy_lq(), uniform_grid(8, 5))
    sol = solve(nlp, nlp.constant_guess())
    lq = assemble_lq_data(nlp, sol)
    return nlp, sol, lq


def _check_sensitivity_oracle(lq) -> CheckResult:
    pert = sample_perturbation(lq.base, toy_component(1.0))
    delta = solve_sensitivity(lq, pert)
    exact = np.sinh(lq.grid.support_times) / np.cosh(1.0)
    err = float(np.max(np.abs(delta.dx[:, 0] - exact)))
    return CheckResult("sensitivity-oracle", err < 1e-8, err, 1e-8,
                       "closed-form response to a constant model shift")


def _check_duality(lq, qoi, seed: int) -> CheckResult:
    adj = solve_adjoint_system(lq, qoi)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        c = rng.standard_normal(3)
        comp = CallableComponent(
            n_g=1,
            eval_fn=lambda t, y, c=c: np.array([c[0] + c[1] * y[0] + c[2] * np.sin(3.0 * t)]),
            jac_fn=lambda t, y, c=c: np.array([[c[1], 0.0, 0.0]]),
            hess_fn=lambda t, y: np.zeros((1, 3, 3)),
        )
        pert = sample_perturbation(lq.base, comp)
        via_adj = qoi_directional_derivative(lq, adj, pert, qoi)
        via_fwd = forward_qoi_derivative(lq, solve_sensitivity(lq, pert), pert, qoi)
        worst = max(worst, abs(via_adj - via_fwd) / max(1.0, abs(via_fwd)))
    return CheckResult("forward-adjoint-duality", worst < 1e-6, worst, 1e-6)


def _check_worst_case(seed: int) -> list[CheckResult]:
    nlp = transcribe(build_toy_lq(), uniform_grid(1, 3))
    sol = solve(nlp, nlp.constant_guess())
    lq = assemble_lq_data(nlp, sol)
    qoi = build_toy_lq().qoi
    adj = solve_adjoint_system(lq, qoi)
    rng = np.random.default_rng(seed)
    n = lq.grid.node_times.size
    bands = ErrorBands(
        times=lq.grid.node_times,
        eps=rng.uniform(0.1, 1.0, (n, 1)),
        eps_x=rng.uniform(0.1, 1.0, (n, 1, 1)),
        eps_u=rng.uniform(0.1, 1.0, (n, 1, 1)),
        eps_p=np.zeros((n, 1, 0)),
    )
    best = -np.inf
    for signs in itertools.product((-1.0, 1.0), repeat=3 * n):
        s = np.asarray(signs).reshape(n, 3)
        trial = PerturbationData(
            times=lq.grid.node_times,
            dg=s[:, :1] * bands.eps,
            dg_x=s[:, 1:2, None] * bands.eps_x,
            dg_u=s[:, 2:3, None] * bands.eps_u,
            dg_p=np.zeros((n, 1, 0)),
        )
        best = max(best, qoi_directional_derivative(lq, adj, trial, qoi))
    wc = lp_worst_case(lq, adj, bands, qoi)
    gap = abs(best - wc.objective)
    results = [
        CheckResult(
            "worst-case-lp", gap < 1e-10, gap, 1e-10,
            f"exhaustive {2 ** (3 * n)}-pattern enumeration",
        )
    ]
    pert = sample_perturbation(lq.base, toy_component(0.7))
    estimate = qoi_error_estimate(lq, adj, pert)
    bound = qoi_error_bound(lq, adj, ErrorBands.from_perturbation(pert), qoi)
    results.append(
        CheckResult(
            "bound-dominates-estimate",
            bound >= estimate,
            bound - estimate,
            0.0,
            f"bound {bound:.6g} vs estimate {estimate:.6g}",
        )
    )
    return results


def run_checks(cfg: RunConfig, inject: Optional[str] = None) -> tuple[list[CheckResult], list[str]]:
    quad_results, quad_lines = _check_quadrature()
    results = list(quad_results)
    results.extend(_check_transcription())
    results.append(_check_nlp_derivatives(cfg.seed, inject))
    results.extend(_check_flight_dynamics(cfg.seed))
    _, _, lq = _solved_toy()
    results.append(_check_sensitivity_oracle(lq))
    results.append(_check_duality(lq, build_toy_lq().qoi, cfg.seed))
    results.extend(_check_worst_case(cfg.seed + 1))
    return results, quad_lines


def cmd_check(cfg: RunConfig, out: Path, args) -> int:
    inject = getattr(args, "inject_fault", None)
    results, quad_lines = run_checks(cfg, inject)
    for line in quad_lines:
        print(line)
    failed = 0
    for res in results:
        mark = "PASS" if res.passed else "FAIL"
        failed += 0 if res.passed else 1
        line = (
            f"[{mark}] {res.name}: observed {res.observed:.3e} "
            f"(tolerance {reporting.format_float(res.tolerance)})"
        )
        if res.detail:
            line += f"  {res.detail}"
        print(line)
    print(f"check: {len(results) - failed} passed, {failed} failed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


# -- argument parsing ------------------------------------------------------------


def _parse_grid(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+)x(\d+)", text.strip())
    if not match:
        raise argparse.ArgumentTypeError(
            f"grid must look like <intervals>x<nodes>, for example 32x4; got {text!r}"
        )
    return int(match.group(1)), int(match.group(2))


def _parse_eps(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"eps must be a comma list of numbers; got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("eps list is empty")
    return values


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file mirroring RunConfig")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--eps", type=_parse_eps, help="comma list of perturbation sizes")
    parser.add_argument("--grid", type=_parse_grid, metavar="IxN", help="intervals x nodes")
    parser.add_argument("--units", help="unit scheme: si or kgkms")
    parser.add_argument("--problem", choices=PROBLEMS, help="problem selector")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocsens",
        description="Solution sensitivities and QoI error bounds for surrogate-driven optimal control",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("solve-reference", cmd_solve_reference, "solve the configured problem and store the result"),
        (
            "sensitivity-predict",
            cmd_sensitivity_predict,
            "compare sensitivity-predicted and re-solved trajectories per eps",
        ),
        ("qoi-study", cmd_qoi_study, "tabulate QoI error estimate, true error, and bound per eps"),
        ("check", cmd_check, "run the package self checks"),
    ]
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(func=func)
        if name == "check":
            p.add_argument(
                "--inject-fault",
                choices=("jacobian",),
                help="self-test hook: corrupt one Jacobian entry so the check must fail",
            )
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.problem:
        cfg = replace(cfg, problem=args.problem)
    if args.grid:
        cfg = replace(cfg, intervals=args.grid[0], nodes=args.grid[1])
    if args.eps:
        cfg = replace(cfg, eps=args.eps)
    if args.units:
        cfg = replace(cfg, units=args.units)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    return cfg.validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return args.func(cfg, out, args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SolveFailure as err:
        print(f"solve failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Adjoint quantity-of-interest derivatives and worst-case error bounds.

The forward route differentiates the whole solution once per model
direction; this module solves a single adjoint system against the same
KKT factorization and then prices any direction as a pair of weighted
inner products. On top of that representation sit the error estimate for
a known model discrepancy and a closed-form bound over box-shaped
discrepancy bands, whose maximizing sign pattern is explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .collocation import CollocationGrid
from .problem import QoiFunctions, composed_jacobian
from .sensitivity import (
    LqData,
    PerturbationData,
    _check_grid,
    _split_solution,
)

__all__ = [
    "AdjointSolution",
    "ErrorBands",
    "WorstCasePerturbation",
    "solve_adjoint_system",
    "qoi_directional_derivative",
    "qoi_error_estimate",
    "lp_worst_case",
    "qoi_error_bound",
]


@dataclass(frozen=True)
class AdjointSolution:
    """Adjoint trajectory attached to one quantity of interest.

    The fields mirror SensitivitySolution: dx rides the support grid with
    dx[0] = 0 exactly, du and dlam the collocation nodes. The functional
    the system was solved for is kept so that error estimates do not need
    it passed again.
    """

    grid: CollocationGrid
    dx: NDArray
    du: NDArray
    dp: NDArray
    dlam: NDArray
    qoi: QoiFunctions


@dataclass(frozen=True)
class ErrorBands:
    """Nonnegative per-sample boxes around a model discrepancy.

    eps bounds the discrepancy values, eps_x, eps_u, eps_p its partial
    derivatives; shapes follow PerturbationData with every entry >= 0.
    """

    times: NDArray
    eps: NDArray
    eps_x: NDArray
    eps_u: NDArray
    eps_p: NDArray

    def __post_init__(self) -> None:
        n = self.times.shape[0]
        n_g = self.eps.shape[1] if self.eps.ndim == 2 else -1
        if self.eps.shape != (n, n_g):
            raise ValueError(f"eps has shape {self.eps.shape}, expected ({n}, n_g)")
        for name, arr in self._arrays():
            if name != "eps" and (arr.ndim != 3 or arr.shape[:2] != (n, n_g)):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n}, {n_g}, ...)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            if arr.size and float(np.min(arr)) < 0.0:
                raise ValueError(f"{name} has negative entries; bands must be nonnegative")

    def _arrays(self) -> list[tuple[str, NDArray]]:
        return [
            ("eps", self.eps),
            ("eps_x", self.eps_x),
            ("eps_u", self.eps_u),
            ("eps_p", self.eps_p),
        ]

    @classmethod
    def from_perturbation(cls, pert: PerturbationData) -> "ErrorBands":
        """Tight bands: the absolute values of one sampled discrepancy."""
        return cls(
            times=pert.times,
            eps=np.abs(pert.dg),
            eps_x=np.abs(pert.dg_x),
            eps_u=np.abs(pert.dg_u),
            eps_p=np.abs(pert.dg_p),
        )


@dataclass(frozen=True)
class WorstCasePerturbation:
    """Sign-pattern maximizer of the relaxed worst-case program.

    Each field saturates its band: delta[i] = sgn(a_i) * eps[i] and the
    derivative boxes follow the signs of the rank-one products with the
    adjoint trajectory. objective is the attained value, computed by the
    same code path as qoi_error_bound.
    """

    times: NDArray
    delta: NDArray
    delta_x: NDArray
    delta_u: NDArray
    delta_p: NDArray
    objective: float

    def as_perturbation(self) -> PerturbationData:
        """Repackage the maximizer so it can be priced like any direction."""
        return PerturbationData(
            times=self.times,
            dg=self.delta,
            dg_x=self.delta_x,
            dg_u=self.delta_u,
            dg_p=self.delta_p,
        )


def _adjoint_rhs(lq: LqData, qoi: QoiFunctions) -> NDArray:
    """Right-hand side representing the functional's gradient.

    Constraint rows stay zero, so the adjoint trajectory obeys the
    homogeneous linearized dynamics; stationarity rows receive the
    terminal gradient at the final state and parameters plus the
    quadrature-weighted running gradient pushed through the model.
    """
    layout = lq.layout
    dims = lq.dims
    rhs = np.zeros(layout.num_vars + layout.num_cons)
    tg = np.asarray(qoi.terminal_grad(lq.base.states[-1], lq.base.parameters), dtype=float)
    rhs[layout.state_slice(layout.num_nodes)] -= tg[: dims.n_x]
    rhs[layout.param_slice] -= tg[dims.n_x :]
    if qoi.running is not None:
        omega = lq.grid.node_weights
        for i in range(layout.num_nodes):
            t, y, g = lq.node_input(i)
            lg = np.asarray(qoi.running_grad(t, y, g), dtype=float)
            rhs[layout.node_indices(i)] -= omega[i] * composed_jacobian(lg, lq.g_jac[i], dims)
    return rhs


def solve_adjoint_system(lq: LqData, qoi: QoiFunctions) -> AdjointSolution:
    """Solve the adjoint system for one quantity of interest.

    Uses the forward sensitivity factorization with a functional-gradient
    right-hand side, so the cost of supporting arbitrarily many
    perturbation directions afterwards is this one linear solve.
    """
    part = _split_solution(lq, lq.solve(_adjoint_rhs(lq, qoi)))
    return AdjointSolution(
        grid=part.grid, dx=part.dx, du=part.du, dp=part.dp, dlam=part.dlam, qoi=qoi
    )


def _qoi_coefficient(lq: LqData, adj: AdjointSolution, qoi: QoiFunctions) -> NDArray:
    """Per-node weights multiplying the direction values.

    Row i collects the mixed Hamiltonian block applied to the adjoint
    variables, the dynamics model-Jacobian transposed against the adjoint
    costate, and the explicit model gradient of the running functional.
    """
    n = lq.layout.num_nodes
    a = np.empty((n, lq.dims.n_g))
    for i in range(n):
        dy = np.concatenate((adj.dx[i + 1], adj.du[i], adj.dp))
        a[i] = lq.hess_yg[i].T @ dy + lq.f_g[i].T @ adj.dlam[i]
        if qoi.running is not None:
            t, y, g = lq.node_input(i)
            a[i] += np.asarray(qoi.running_grad(t, y, g), dtype=float)[lq.dims.sg]
    return a


def qoi_directional_derivative(
    lq: LqData,
    adj: AdjointSolution,
    pert: PerturbationData,
    qoi: Optional[QoiFunctions] = None,
) -> float:
    """Derivative of the quantity of interest along one model direction.

    Two quadrature sums: the direction values against the per-node
    coefficient, and the direction's own partial derivatives contracted
    between the model gradient of the Hamiltonian and the adjoint
    trajectory. Linear in the perturbation, no additional solves.
    """
    qoi = adj.qoi if qoi is None else qoi
    _check_grid(lq, pert.times, "perturbation")
    a = _qoi_coefficient(lq, adj, qoi)
    omega = lq.grid.node_weights
    value = 0.0
    for i in range(lq.layout.num_nodes):
        inner = pert.dg_x[i] @ adj.dx[i + 1] + pert.dg_u[i] @ adj.du[i] + pert.dg_p[i] @ adj.dp
        value += omega[i] * float(a[i] @ pert.dg[i] + lq.d_vec[i] @ inner)
    return float(value)


def qoi_error_estimate(lq: LqData, adj: AdjointSolution, pert_truth: PerturbationData) -> float:
    """First-order estimate of the functional error due to a known discrepancy.

    pert_truth samples the surrogate-minus-truth difference and its
    partials along the base trajectory; the estimate is the magnitude of
    the resulting directional derivative.
    """
    return abs(qoi_directional_derivative(lq, adj, pert_truth, adj.qoi))


def _bound_value(lq: LqData, adj: AdjointSolution, bands: ErrorBands, qoi: QoiFunctions) -> float:
    """Closed-form worst case over the band boxes; shared by bound and LP."""
    a = _qoi_coefficient(lq, adj, qoi)
    omega = lq.grid.node_weights
    value = 0.0
    for i in range(lq.layout.num_nodes):
        d_abs = np.abs(lq.d_vec[i])
        value += omega[i] * float(
            np.abs(a[i]) @ bands.eps[i]
            + d_abs @ (bands.eps_x[i] @ np.abs(adj.dx[i + 1]))
            + d_abs @ (bands.eps_u[i] @ np.abs(adj.du[i]))
            + d_abs @ (bands.eps_p[i] @ np.abs(adj.dp))
        )
    return float(value)


def _sign(arr: NDArray) -> NDArray:
    # zeros resolve to +1 so the maximizer is deterministic
    return np.where(arr >= 0.0, 1.0, -1.0)


def lp_worst_case(
    lq: LqData,
    adj: AdjointSolution,
    bands: ErrorBands,
    qoi: QoiFunctions,
) -> WorstCasePerturbation:
    """Maximize the estimated error over independent samples in the bands.

    Relaxing the coupling between a discrepancy and its derivatives makes
    the program linear with a box feasible set, so each entry saturates at
    the band boundary with the sign of its coefficient.
    """
    _check_grid(lq, bands.times, "error bands")
    a = _qoi_coefficient(lq, adj, qoi)
    n = lq.layout.num_nodes
    delta = np.empty_like(bands.eps)
    delta_x = np.empty_like(bands.eps_x)
    delta_u = np.empty_like(bands.eps_u)
    delta_p = np.empty_like(bands.eps_p)
    for i in range(n):
        d = lq.d_vec[i]
        delta[i] = _sign(a[i]) * bands.eps[i]
        delta_x[i] = _sign(np.outer(d, adj.dx[i + 1])) * bands.eps_x[i]
        delta_u[i] = _sign(np.outer(d, adj.du[i])) * bands.eps_u[i]
        delta_p[i] = _sign(np.outer(d, adj.dp)) * bands.eps_p[i]
    return WorstCasePerturbation(
        times=bands.times,
        delta=delta,
        delta_x=delta_x,
        delta_u=delta_u,
        delta_p=delta_p,
        objective=_bound_value(lq, adj, bands, qoi),
    )


def qoi_error_bound(
    lq: LqData,
    adj: AdjointSolution,
    bands: ErrorBands,
    qoi: QoiFunctions,
) -> float:
    """Guaranteed ceiling on the error estimate over the band boxes.

    Dominates qoi_error_estimate whenever the bands dominate the sampled
    discrepancy elementwise, and grows monotonically with every band
    entry.
    """
    _check_grid(lq, bands.times, "error bands")
    return _bound_value(lq, adj, bands, qoi)

"""Hamiltonian-block data and forward solution sensitivities.

A converged bound-free solution of a transcribed problem satisfies a
square nonlinear KKT system, which defines the discrete solution
implicitly as a function of the component model. Differentiating that
system along a model direction gives one sparse saddle linear solve per
direction. The matrix is the exact Lagrangian KKT matrix at the solution,
so its node blocks are quadrature-weighted Hamiltonian second derivatives
and the computed sensitivities are the exact derivatives of the discrete
solution, not a separate discretization of the variational equations.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .collocation import CollocationGrid
from .problem import (
    ComponentFunction,
    Dims,
    QoiFunctions,
    Trajectory,
    composed_jacobian,
    composed_scalar_hessian,
    pack_y,
)
from .solver import (
    _INERTIA_SIZE_LIMIT,
    KktFactorization,
    LinearSolveError,
    NlpSolution,
    assemble_kkt,
    kkt_inertia,
)
from .transcription import Nlp, VariableLayout

# A solution qualifies for sensitivity analysis only if every bound is
# slack; multipliers above this are treated as active constraints.
_BOUND_MULTIPLIER_TOL = 1e-6

# How well the supplied point must satisfy the discrete KKT system before
# the linearization around it means anything.
_STATIONARITY_TOL = 1e-6


class SsocViolationError(RuntimeError):
    """KKT matrix singular or with wrong inertia at the linearization point.

    Sensitivities require the second-order sufficient conditions to hold
    at the solution; a singular or wrongly-signed KKT matrix means they
    fail numerically and the implicit function underlying the sensitivity
    system is not defined.
    """


def _describe_variable(layout: VariableLayout, index: int) -> str:
    dims = layout.dims
    if index < layout.num_states_flat:
        return f"state component {index % dims.n_x} at support point {index // dims.n_x}"
    if index < layout.param_slice.start:
        offset = index - layout.num_states_flat
        return f"control component {offset % dims.n_u} at node {offset // dims.n_u}"
    return f"parameter component {index - layout.param_slice.start}"


@dataclass(frozen=True)
class PerturbationData:
    """Samples of a model direction and its partials along a trajectory.

    Shapes: dg is (num_nodes, n_g); dg_x, dg_u, dg_p carry the partial
    derivatives with respect to state, control, and parameters as
    (num_nodes, n_g, n_x) and so on.
    """

    times: NDArray
    dg: NDArray
    dg_x: NDArray
    dg_u: NDArray
    dg_p: NDArray

    def __post_init__(self) -> None:
        n = self.times.shape[0]
        n_g = self.dg.shape[1] if self.dg.ndim == 2 else -1
        if self.dg.shape != (n, n_g):
            raise ValueError(f"dg has shape {self.dg.shape}, expected ({n}, n_g)")
        for name, arr in (("dg_x", self.dg_x), ("dg_u", self.dg_u), ("dg_p", self.dg_p)):
            if arr.ndim != 3 or arr.shape[:2] != (n, n_g):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n}, {n_g}, ...)")
        for name, arr in self._arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite samples")

    def _arrays(self) -> list[tuple[str, NDArray]]:
        return [
            ("dg", self.dg),
            ("dg_x", self.dg_x),
            ("dg_u", self.dg_u),
            ("dg_p", self.dg_p),
        ]

    def scaled(self, factor: float) -> "PerturbationData":
        """The same direction multiplied by a scalar."""
        return PerturbationData(
            times=self.times,
            dg=factor * self.dg,
            dg_x=factor * self.dg_x,
            dg_u=factor * self.dg_u,
            dg_p=factor * self.dg_p,
        )


def sample_perturbation(base: Trajectory, direction: ComponentFunction) -> PerturbationData:
    """Evaluate a model direction and its partials along a base trajectory.

    Sampling happens at the collocation nodes using the stored discrete
    samples, so the result is grid-compatible with LqData assembled from
    the same trajectory.
    """
    n = base.grid.num_nodes
    n_x = base.states.shape[1]
    n_u = base.controls.shape[1]
    n_p = base.parameters.shape[0]
    n_g = direction.n_g
    dg = np.empty((n, n_g))
    dg_x = np.empty((n, n_g, n_x))
    dg_u = np.empty((n, n_g, n_u))
    dg_p = np.empty((n, n_g, n_p))
    for i in range(n):
        t = base.grid.node_times[i]
        y = pack_y(base.states[i + 1], base.controls[i], base.parameters)
        dg[i] = direction.eval(t, y)
        jac = direction.jac_y(t, y)
        dg_x[i] = jac[:, :n_x]
        dg_u[i] = jac[:, n_x : n_x + n_u]
        dg_p[i] = jac[:, n_x + n_u :]
    return PerturbationData(times=base.grid.node_times.copy(), dg=dg, dg_x=dg_x, dg_u=dg_u, dg_p=dg_p)


@dataclass
class LqData:
    """Per-node linear-quadratic expansion data at a solved problem.

    The stacked arrays hess_yy and hess_yg hold the Hamiltonian second
    derivatives with the model folded in through the full chain rule;
    named views (h_xx, h_xu, ..., h_pg) slice them by the (x, u, p)
    packing. dyn_jac stacks the total dynamics Jacobian whose column
    blocks are the named a_mat, b_mat, c_mat views. The saddle matrix kkt
    is the exact Lagrangian KKT matrix of the transcription, factorized
    once; directional solves share the factorization.
    """

    dims: Dims
    layout: VariableLayout
    grid: CollocationGrid
    base: Trajectory
    dyn_jac: NDArray
    f_g: NDArray
    d_vec: NDArray
    g_val: NDArray
    g_jac: NDArray
    hess_yy: NDArray
    hess_yg: NDArray
    phi_xx: NDArray
    phi_xp: NDArray
    phi_pp: NDArray
    kkt: sp.csc_matrix
    inertia: Optional[tuple[int, int, int]]
    _factor: KktFactorization = field(repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def times(self) -> NDArray:
        return self.grid.node_times

    @property
    def a_mat(self) -> NDArray:
        return self.dyn_jac[:, :, self.dims.sx]

    @property
    def b_mat(self) -> NDArray:
        return self.dyn_jac[:, :, self.dims.su]

    @property
    def c_mat(self) -> NDArray:
        return self.dyn_jac[:, :, self.dims.sp]

    @property
    def h_xx(self) -> NDArray:
        return self.hess_yy[:, self.dims.sx, self.dims.sx]

    @property
    def h_xu(self) -> NDArray:
        return self.hess_yy[:, self.dims.sx, self.dims.su]

    @property
    def h_xp(self) -> NDArray:
        return self.hess_yy[:, self.dims.sx, self.dims.sp]

    @property
    def h_uu(self) -> NDArray:
        return self.hess_yy[:, self.dims.su, self.dims.su]

    @property
    def h_up(self) -> NDArray:
        return self.hess_yy[:, self.dims.su, self.dims.sp]

    @property
    def h_pp(self) -> NDArray:
        return self.hess_yy[:, self.dims.sp, self.dims.sp]

    @property
    def h_xg(self) -> NDArray:
        return self.hess_yg[:, self.dims.sx, :]

    @property
    def h_ug(self) -> NDArray:
        return self.hess_yg[:, self.dims.su, :]

    @property
    def h_pg(self) -> NDArray:
        return self.hess_yg[:, self.dims.sp, :]

    def solve(self, rhs: NDArray) -> NDArray:
        """Solve the KKT system for one right-hand side."""
        with self._lock:
            try:
                return self._factor.solve(rhs)
            except LinearSolveError as err:
                raise SsocViolationError(
                    f"KKT solve failed at the linearization point: {err}"
                ) from err

    def node_input(self, i: int) -> tuple[float, NDArray, NDArray]:
        """Time, packed (x, u, p), and model value at node i of the base."""
        t = float(self.grid.node_times[i])
        y = pack_y(self.base.states[i + 1], self.base.controls[i], self.base.parameters)
        return t, y, self.g_val[i]


def assemble_lq_data(nlp: Nlp, sol: NlpSolution) -> LqData:
    """Expand a transcribed problem to second order at a solved point.

    The solution must be interior: any bound multiplier above 1e-6 is
    reported as an active bound and rejected, as is a problem with pinned
    terminal states, because solution sensitivities are not defined there.
    """
    layout = nlp.layout
    dims = layout.dims
    if layout.num_terminal:
        raise ValueError(
            "problem pins terminal state components; solution sensitivities are undefined"
        )
    for z, side in ((sol.z_lower, "lower"), (sol.z_upper, "upper")):
        if z.size and float(np.max(np.abs(z), initial=0.0)) > _BOUND_MULTIPLIER_TOL:
            worst = int(np.argmax(np.abs(z)))
            raise ValueError(
                f"active {side} bound on {_describe_variable(layout, worst)} "
                f"(multiplier {z[worst]:.3e}); sensitivities require an interior solution"
            )

    w = sol.primal
    nu = sol.multipliers
    grad = nlp.gradient(w)
    jac = nlp.jacobian(w)
    stationarity = float(np.max(np.abs(grad + jac.T @ nu - sol.z_lower + sol.z_upper)))
    feasibility = float(np.max(np.abs(nlp.constraints(w))))
    if max(stationarity, feasibility) > _STATIONARITY_TOL:
        raise ValueError(
            f"point violates the optimality system (stationarity {stationarity:.3e}, "
            f"feasibility {feasibility:.3e}); refusing to linearize"
        )

    base = nlp.unpack(w, nu)
    problem = nlp.problem
    funcs = problem.funcs
    comp = problem.component
    n = layout.num_nodes
    n_y, n_g = dims.n_y, dims.n_g

    dyn_jac = np.empty((n, dims.n_x, n_y))
    f_g = np.empty((n, dims.n_x, n_g))
    d_vec = np.empty((n, n_g))
    g_val = np.empty((n, n_g))
    g_jac = np.empty((n, n_g, n_y))
    hess_yy = np.empty((n, n_y, n_y))
    hess_yg = np.empty((n, n_y, n_g))
    for i in range(n):
        t = float(nlp.grid.node_times[i])
        y = pack_y(base.states[i + 1], base.controls[i], base.parameters)
        g = comp.eval(t, y)
        g_y = comp.jac_y(t, y)
        lam = base.costates[i]
        f_jac = np.asarray(funcs.dynamics_jac(t, y, g), dtype=float)
        h_grad = np.asarray(funcs.running_cost_grad(t, y, g), dtype=float) + f_jac.T @ lam
        h_hess = np.asarray(funcs.running_cost_hess(t, y, g), dtype=float) + np.tensordot(
            lam, np.asarray(funcs.dynamics_hess(t, y, g), dtype=float), axes=1
        )
        g_val[i] = g
        g_jac[i] = g_y
        dyn_jac[i] = composed_jacobian(f_jac, g_y, dims)
        f_g[i] = f_jac[:, dims.sg]
        d_vec[i] = h_grad[dims.sg]
        hess_yy[i] = composed_scalar_hessian(h_grad, h_hess, g_y, comp.hess_yy(t, y), dims)
        hess_yg[i] = h_hess[: dims.n_y, dims.sg] + g_y.T @ h_hess[dims.sg, dims.sg]

    x_f = base.states[-1]
    term = np.asarray(funcs.terminal_cost_hess(x_f, base.parameters), dtype=float)
    phi_xx = term[: dims.n_x, : dims.n_x]
    phi_xp = term[: dims.n_x, dims.n_x :]
    phi_pp = term[dims.n_x :, dims.n_x :]

    for name, arr in (
        ("dynamics Jacobian", dyn_jac),
        ("Hamiltonian Hessian", hess_yy),
        ("mixed Hamiltonian block", hess_yg),
        ("terminal Hessian", term),
    ):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite entries")

    kkt = assemble_kkt(nlp.lagrangian_hessian(w, nu), jac)
    nv, nc = layout.num_vars, layout.num_cons
    inertia = None
    if nv + nc <= _INERTIA_SIZE_LIMIT:
        inertia = kkt_inertia(kkt)
        if inertia != (nv, nc, 0):
            raise SsocViolationError(
                f"KKT inertia {inertia} differs from ({nv}, {nc}, 0); "
                "second-order sufficiency fails at this point"
            )
    try:
        factor = KktFactorization(kkt)
    except LinearSolveError as err:
        raise SsocViolationError(
            f"KKT matrix is singular at the solution: {err}"
        ) from err

    return LqData(
        dims=dims,
        layout=layout,
        grid=nlp.grid,
        base=base,
        dyn_jac=dyn_jac,
        f_g=f_g,
        d_vec=d_vec,
        g_val=g_val,
        g_jac=g_jac,
        hess_yy=hess_yy,
        hess_yg=hess_yg,
        phi_xx=phi_xx,
        phi_xp=phi_xp,
        phi_pp=phi_pp,
        kkt=kkt,
        inertia=inertia,
        _factor=factor,
    )


@dataclass(frozen=True)
class SensitivitySolution:
    """Directional derivative of the discrete solution along a direction.

    dx lives on the support grid, du and dlam on the node grid, and dp is
    the parameter derivative. dx[0] is exactly zero: the initial condition
    does not move with the model.
    """

    grid: CollocationGrid
    dx: NDArray
    du: NDArray
    dp: NDArray
    dlam: NDArray

    def as_trajectory(self) -> Trajectory:
        """The deviation samples wrapped for interpolation."""
        return Trajectory(
            grid=self.grid,
            states=self.dx,
            controls=self.du,
            parameters=self.dp,
            costates=self.dlam,
        )


def _check_grid(lq: LqData, times: NDArray, what: str) -> None:
    if times.shape != lq.grid.node_times.shape or not np.allclose(
        times, lq.grid.node_times, rtol=0.0, atol=1e-12
    ):
        raise ValueError(f"{what} was sampled on a different grid than the LQ data")


def _directional_rhs(lq: LqData, pert: PerturbationData) -> NDArray:
    """Right-hand side of the sensitivity system for one direction.

    Stationarity rows receive the mixed Hamiltonian blocks applied to the
    direction samples, defect rows the dynamics response; both carry the
    signs of moving the model terms to the right-hand side.
    """
    layout = lq.layout
    rhs = np.zeros(layout.num_vars + layout.num_cons)
    omega = lq.grid.node_weights
    for i in range(layout.num_nodes):
        dgy = np.concatenate((pert.dg_x[i], pert.dg_u[i], pert.dg_p[i]), axis=1)
        idx = layout.node_indices(i)
        rhs[idx] -= omega[i] * (lq.hess_yg[i] @ pert.dg[i] + dgy.T @ lq.d_vec[i])
        rows = layout.defect_rows(i)
        rhs[layout.num_vars + rows.start : layout.num_vars + rows.stop] += lq.f_g[i] @ pert.dg[i]
    return rhs


def _split_solution(lq: LqData, step: NDArray) -> SensitivitySolution:
    layout = lq.layout
    dims = lq.dims
    nv = layout.num_vars
    dx = step[: layout.num_states_flat].reshape(layout.num_support, dims.n_x).copy()
    du = step[layout.num_states_flat : layout.param_slice.start].reshape(
        layout.num_nodes, dims.n_u
    ).copy()
    dp = step[layout.param_slice.start : nv].copy()
    scale = max(1.0, float(np.max(np.abs(dx), initial=0.0)))
    drift = float(np.max(np.abs(dx[0]), initial=0.0))
    if drift > 1e-8 * scale:
        raise SsocViolationError(
            f"initial-state sensitivity {drift:.3e} should vanish; the solve is unreliable"
        )
    dx[0] = 0.0
    dnu = step[nv + layout.defect_rows_all.start : nv + layout.defect_rows_all.stop]
    dlam = -dnu.reshape(layout.num_nodes, dims.n_x) / lq.grid.node_weights[:, None]
    return SensitivitySolution(grid=lq.grid, dx=dx, du=du, dp=dp, dlam=dlam)


def solve_sensitivity(lq: LqData, pert: PerturbationData) -> SensitivitySolution:
    """Differentiate the discrete solution along a model direction.

    One sparse saddle solve against the factorized KKT matrix; no
    iteration is involved because the system is linear-quadratic.
    """
    _check_grid(lq, pert.times, "perturbation")
    return _split_solution(lq, lq.solve(_directional_rhs(lq, pert)))


def forward_qoi_derivative(
    lq: LqData,
    delta: SensitivitySolution,
    pert: PerturbationData,
    qoi: QoiFunctions,
) -> float:
    """Chain rule for the quantity of interest through a known sensitivity.

    Combines the terminal gradient with the quadrature of the running
    gradient contracted against the solution deviation, plus the explicit
    model term when the running part depends on the model directly.
    """
    _check_grid(lq, pert.times, "perturbation")
    dims = lq.dims
    tg = np.asarray(qoi.terminal_grad(lq.base.states[-1], lq.base.parameters), dtype=float)
    value = float(tg[: dims.n_x] @ delta.dx[-1] + tg[dims.n_x :] @ delta.dp)
    if qoi.running is not None:
        omega = lq.grid.node_weights
        for i in range(lq.layout.num_nodes):
            t, y, g = lq.node_input(i)
            lg = np.asarray(qoi.running_grad(t, y, g), dtype=float)
            dy = np.concatenate((delta.dx[i + 1], delta.du[i], delta.dp))
            value += omega[i] * float(
                composed_jacobian(lg, lq.g_jac[i], dims) @ dy + lg[dims.sg] @ pert.dg[i]
            )
    return value

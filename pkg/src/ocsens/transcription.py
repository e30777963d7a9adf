"""Transcription of optimal control problems to sparse NLPs.

States are decision variables on the support grid (interval starts shared
with the previous interval's final node), controls on the node grid, and
parameters once. Collocation enforces D X - f = 0 at every node, the
initial condition is an explicit equality block, and the integral cost is
the Radau quadrature of the running cost. Component models are composed
into all derivatives with the full chain rule, including the component's
own curvature weighted by the partial g-gradient of the integrand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .collocation import CollocationGrid
from .problem import (
    Dims,
    OcpProblem,
    Trajectory,
    composed_jacobian,
    composed_scalar_hessian,
    pack_y,
)


@dataclass(frozen=True)
class VariableLayout:
    """Index bookkeeping for the flat decision vector and constraint rows.

    Variables: all support states, then all node controls, then parameters.
    Constraints: the initial condition block, then one defect block per
    node, then any pinned terminal components.
    """

    dims: Dims
    num_support: int
    num_nodes: int
    num_terminal: int = 0

    @property
    def num_states_flat(self) -> int:
        return self.num_support * self.dims.n_x

    @property
    def num_vars(self) -> int:
        return self.num_states_flat + self.num_nodes * self.dims.n_u + self.dims.n_p

    @property
    def num_cons(self) -> int:
        return (1 + self.num_nodes) * self.dims.n_x + self.num_terminal

    def state_slice(self, support_index: int) -> slice:
        n_x = self.dims.n_x
        return slice(support_index * n_x, (support_index + 1) * n_x)

    def control_slice(self, node_index: int) -> slice:
        n_u = self.dims.n_u
        base = self.num_states_flat
        return slice(base + node_index * n_u, base + (node_index + 1) * n_u)

    @property
    def param_slice(self) -> slice:
        return slice(self.num_vars - self.dims.n_p, self.num_vars)

    @property
    def init_rows(self) -> slice:
        return slice(0, self.dims.n_x)

    def defect_rows(self, node_index: int) -> slice:
        n_x = self.dims.n_x
        return slice((1 + node_index) * n_x, (2 + node_index) * n_x)

    @property
    def defect_rows_all(self) -> slice:
        return slice(self.dims.n_x, (1 + self.num_nodes) * self.dims.n_x)

    def node_indices(self, node_index: int) -> NDArray:
        """Global variable indices of (x, u, p) at a node, packed order."""
        state = np.arange(self.state_slice(node_index + 1).start, self.state_slice(node_index + 1).stop)
        control = np.arange(self.control_slice(node_index).start, self.control_slice(node_index).stop)
        param = np.arange(self.param_slice.start, self.param_slice.stop)
        return np.concatenate((state, control, param))

    def scaling_vector(self, state: NDArray, control: NDArray, param: NDArray) -> NDArray:
        """Per-variable scales tiled over the flat decision vector."""
        state = np.asarray(state, dtype=float)
        control = np.asarray(control, dtype=float)
        param = np.asarray(param, dtype=float)
        if state.shape != (self.dims.n_x,) or control.shape != (self.dims.n_u,) or param.shape != (self.dims.n_p,):
            raise ValueError("scaling components do not match the problem dimensions")
        return np.concatenate(
            (
                np.tile(state, self.num_support),
                np.tile(control, self.num_nodes),
                param,
            )
        )


class Nlp:
    """Sparse equality-constrained NLP with box bounds.

    Wraps a transcribed problem: objective/gradient, constraints with a
    fixed-pattern sparse Jacobian, and the exact Lagrangian Hessian for
    L = objective + nu^T constraints. Evaluation at one point is cached so
    the objective, constraints, and their derivatives share model calls.
    """

    def __init__(self, problem: OcpProblem, grid: CollocationGrid):
        t0, tf = problem.horizon
        if not (np.isclose(grid.t0, t0) and np.isclose(grid.tf, tf)):
            raise ValueError(
                f"grid spans [{grid.t0}, {grid.tf}] but the problem horizon is [{t0}, {tf}]"
            )
        self.problem = problem
        self.grid = grid
        fixed = (
            np.nonzero(~np.isnan(problem.terminal_state))[0]
            if problem.terminal_state is not None
            else np.empty(0, dtype=int)
        )
        self._terminal_fixed = fixed
        self.layout = VariableLayout(
            dims=problem.dims,
            num_support=grid.num_support,
            num_nodes=grid.num_nodes,
            num_terminal=fixed.size,
        )
        self.lower, self.upper = self._variable_bounds()
        self._cache_key: Optional[bytes] = None
        self._cache: dict = {}
        self._build_jacobian_pattern()
        self._build_hessian_pattern()

    # -- variable/bound plumbing ------------------------------------------

    def _variable_bounds(self) -> tuple[NDArray, NDArray]:
        lay = self.layout
        dims = lay.dims
        lower = np.full(lay.num_vars, -np.inf)
        upper = np.full(lay.num_vars, np.inf)
        b = self.problem.bounds
        if b.x_lower is not None:
            lower[: lay.num_states_flat] = np.tile(b.x_lower, lay.num_support)
        if b.x_upper is not None:
            upper[: lay.num_states_flat] = np.tile(b.x_upper, lay.num_support)
        if dims.n_u and b.u_lower is not None:
            lower[lay.num_states_flat : lay.param_slice.start] = np.tile(b.u_lower, lay.num_nodes)
        if dims.n_u and b.u_upper is not None:
            upper[lay.num_states_flat : lay.param_slice.start] = np.tile(b.u_upper, lay.num_nodes)
        if dims.n_p and b.p_lower is not None:
            lower[lay.param_slice] = b.p_lower
        if dims.n_p and b.p_upper is not None:
            upper[lay.param_slice] = b.p_upper
        return lower, upper

    def pack(self, traj: Trajectory) -> NDArray:
        """Flatten a trajectory on this grid into a decision vector."""
        w = np.empty(self.layout.num_vars)
        w[: self.layout.num_states_flat] = np.ravel(traj.states)
        if self.layout.dims.n_u:
            w[self.layout.num_states_flat : self.layout.param_slice.start] = np.ravel(traj.controls)
        if self.layout.dims.n_p:
            w[self.layout.param_slice] = traj.parameters
        return w

    def unpack(self, w: NDArray, multipliers: Optional[NDArray] = None) -> Trajectory:
        """Rebuild a trajectory (optionally with costates) from a vector.

        Defect multipliers scaled by the quadrature weights estimate the
        continuous costate: lambda_i = -nu_i / w_i.
        """
        lay = self.layout
        dims = lay.dims
        states = w[: lay.num_states_flat].reshape(lay.num_support, dims.n_x)
        controls = w[lay.num_states_flat : lay.param_slice.start].reshape(lay.num_nodes, dims.n_u)
        params = np.asarray(w[lay.param_slice])
        costates = None
        if multipliers is not None:
            nu = multipliers[lay.defect_rows_all].reshape(lay.num_nodes, dims.n_x)
            costates = -nu / self.grid.node_weights[:, None]
        return Trajectory(
            grid=self.grid,
            states=states.copy(),
            controls=controls.copy(),
            parameters=params.copy(),
            costates=costates,
        )

    def constant_guess(
        self,
        state: Optional[NDArray] = None,
        control: Optional[NDArray] = None,
        parameters: Optional[NDArray] = None,
    ) -> NDArray:
        """Decision vector holding every sample at the given constants.

        Defaults: state at the problem's initial condition, zero control,
        and the midpoint of any finite parameter bounds (zero otherwise).
        """
        lay = self.layout
        dims = lay.dims
        state = self.problem.x0 if state is None else np.asarray(state, dtype=float)
        control = np.zeros(dims.n_u) if control is None else np.asarray(control, dtype=float)
        if parameters is None:
            lo = self.lower[lay.param_slice]
            hi = self.upper[lay.param_slice]
            parameters = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
        w = np.empty(lay.num_vars)
        w[: lay.num_states_flat] = np.tile(state, lay.num_support)
        w[lay.num_states_flat : lay.param_slice.start] = np.tile(control, lay.num_nodes)
        w[lay.param_slice] = parameters
        return w

    # -- pointwise model evaluation ---------------------------------------

    def _point_data(self, w: NDArray) -> dict:
        key = w.tobytes()
        if key == self._cache_key:
            return self._cache
        problem, grid, lay = self.problem, self.grid, self.layout
        dims = lay.dims
        funcs = problem.funcs
        comp = problem.component
        n = grid.num_nodes
        data = {
            "y": np.empty((n, dims.n_y)),
            "g": np.empty((n, dims.n_g)),
            "g_y": np.empty((n, dims.n_g, dims.n_y)),
            "f": np.empty((n, dims.n_x)),
            "f_jac": np.empty((n, dims.n_x, dims.n_yg)),
            "l": np.empty(n),
            "l_grad": np.empty((n, dims.n_yg)),
        }
        p = w[lay.param_slice]
        for i in range(n):
            t = grid.node_times[i]
            x = w[lay.state_slice(i + 1)]
            u = w[lay.control_slice(i)]
            y = pack_y(x, u, p)
            g = comp.eval(t, y)
            data["y"][i] = y
            data["g"][i] = g
            data["g_y"][i] = comp.jac_y(t, y)
            data["f"][i] = funcs.dynamics(t, y, g)
            data["f_jac"][i] = funcs.dynamics_jac(t, y, g)
            data["l"][i] = funcs.running_cost(t, y, g)
            data["l_grad"][i] = funcs.running_cost_grad(t, y, g)
        x_f = w[lay.state_slice(lay.num_support - 1)]
        data["terminal"] = funcs.terminal_cost(x_f, p)
        data["terminal_grad"] = np.asarray(funcs.terminal_cost_grad(x_f, p), dtype=float)
        self._cache_key = key
        self._cache = data
        return data

    # -- objective / constraints ------------------------------------------

    def objective(self, w: NDArray) -> float:
        data = self._point_data(w)
        return float(data["terminal"] + self.grid.node_weights @ data["l"])

    def gradient(self, w: NDArray) -> NDArray:
        data = self._point_data(w)
        lay = self.layout
        dims = lay.dims
        grad = np.zeros(lay.num_vars)
        for i in range(lay.num_nodes):
            total = composed_jacobian(data["l_grad"][i], data["g_y"][i], dims)
            idx = lay.node_indices(i)
            grad[idx] += self.grid.node_weights[i] * total
        tgrad = data["terminal_grad"]
        grad[lay.state_slice(lay.num_support - 1)] += tgrad[: dims.n_x]
        grad[lay.param_slice] += tgrad[dims.n_x :]
        return grad

    def constraints(self, w: NDArray) -> NDArray:
        data = self._point_data(w)
        lay = self.layout
        grid = self.grid
        dims = lay.dims
        c = np.empty(lay.num_cons)
        c[lay.init_rows] = w[lay.state_slice(0)] - self.problem.x0
        n = grid.nodes_per_interval
        states = w[: lay.num_states_flat].reshape(lay.num_support, dims.n_x)
        for k in range(grid.num_intervals):
            block = grid.diff_matrices[k] @ states[k * n : k * n + n + 1]
            for i in range(n):
                node = k * n + i
                c[lay.defect_rows(node)] = block[i] - data["f"][node]
        if lay.num_terminal:
            x_f = w[lay.state_slice(lay.num_support - 1)]
            target = self.problem.terminal_state[self._terminal_fixed]
            c[-lay.num_terminal :] = x_f[self._terminal_fixed] - target
        return c

    # -- sparse Jacobian ----------------------------------------------------

    def _build_jacobian_pattern(self) -> None:
        lay = self.layout
        dims = lay.dims
        grid = self.grid
        n = grid.nodes_per_interval
        rows, cols, const = [], [], []

        init_cols = np.arange(lay.state_slice(0).start, lay.state_slice(0).stop)
        rows.append(np.arange(dims.n_x))
        cols.append(init_cols)
        const.append(np.ones(dims.n_x))

        d_rows, d_cols, d_vals = [], [], []
        f_rows, f_cols = [], []
        eye = np.arange(dims.n_x)
        for k in range(grid.num_intervals):
            for i in range(n):
                node = k * n + i
                r0 = lay.defect_rows(node).start
                for j in range(n + 1):
                    col0 = lay.state_slice(k * n + j).start
                    d_rows.append(r0 + eye)
                    d_cols.append(col0 + eye)
                    d_vals.append(np.full(dims.n_x, grid.diff_matrices[k, i, j]))
                idx = lay.node_indices(node)
                rr, cc = np.meshgrid(r0 + eye, idx, indexing="ij")
                f_rows.append(rr.ravel())
                f_cols.append(cc.ravel())
        rows.extend(d_rows)
        cols.extend(d_cols)
        const.extend(d_vals)

        self._jac_nconst = sum(v.size for v in const)
        rows.extend(f_rows)
        cols.extend(f_cols)

        if lay.num_terminal:
            r0 = lay.num_cons - lay.num_terminal
            c0 = lay.state_slice(lay.num_support - 1).start
            rows.append(r0 + np.arange(lay.num_terminal))
            cols.append(c0 + self._terminal_fixed)

        self._jac_rows = np.concatenate(rows)
        self._jac_cols = np.concatenate(cols)
        self._jac_const = np.concatenate(const)
        self._jac_nnz = self._jac_rows.size

    def jacobian(self, w: NDArray) -> sp.csr_matrix:
        """Constraint Jacobian; the sparsity pattern is fixed across calls."""
        data = self._point_data(w)
        lay = self.layout
        dims = lay.dims
        vals = np.empty(self._jac_nnz)
        vals[: self._jac_nconst] = self._jac_const
        pos = self._jac_nconst
        block = dims.n_x * (dims.n_x + dims.n_u + dims.n_p)
        for i in range(lay.num_nodes):
            total = composed_jacobian(data["f_jac"][i], data["g_y"][i], dims)
            vals[pos : pos + block] = -total.ravel()
            pos += block
        if lay.num_terminal:
            vals[pos:] = 1.0
        mat = sp.coo_matrix(
            (vals, (self._jac_rows, self._jac_cols)),
            shape=(lay.num_cons, lay.num_vars),
        )
        return mat.tocsr()

    # -- Lagrangian Hessian --------------------------------------------------

    def _build_hessian_pattern(self) -> None:
        lay = self.layout
        dims = lay.dims
        rows, cols = [], []
        for i in range(lay.num_nodes):
            idx = lay.node_indices(i)
            rr, cc = np.meshgrid(idx, idx, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
        tidx = np.concatenate(
            (
                np.arange(lay.state_slice(lay.num_support - 1).start, lay.state_slice(lay.num_support - 1).stop),
                np.arange(lay.param_slice.start, lay.param_slice.stop),
            )
        )
        rr, cc = np.meshgrid(tidx, tidx, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        self._hess_rows = np.concatenate(rows)
        self._hess_cols = np.concatenate(cols)

    def lagrangian_hessian(self, w: NDArray, nu: NDArray) -> sp.csc_matrix:
        """Exact Hessian of objective + nu^T constraints over the variables."""
        data = self._point_data(w)
        problem, lay, grid = self.problem, self.layout, self.grid
        dims = lay.dims
        comp = problem.component
        nblock = (dims.n_x + dims.n_u + dims.n_p) ** 2
        vals = np.empty(self._hess_rows.size)
        pos = 0
        for i in range(lay.num_nodes):
            t = grid.node_times[i]
            y = data["y"][i]
            g = data["g"][i]
            omega = grid.node_weights[i]
            nu_i = nu[lay.defect_rows(i)]
            grad = omega * data["l_grad"][i] - data["f_jac"][i].T @ nu_i
            hess = omega * problem.funcs.running_cost_hess(t, y, g) - np.tensordot(
                nu_i, problem.funcs.dynamics_hess(t, y, g), axes=1
            )
            total = composed_scalar_hessian(grad, hess, data["g_y"][i], comp.hess_yy(t, y), dims)
            vals[pos : pos + nblock] = total.ravel()
            pos += nblock
        x_f = w[lay.state_slice(lay.num_support - 1)]
        p = w[lay.param_slice]
        term = np.asarray(problem.funcs.terminal_cost_hess(x_f, p), dtype=float)
        vals[pos:] = term.ravel()
        mat = sp.coo_matrix(
            (vals, (self._hess_rows, self._hess_cols)),
            shape=(lay.num_vars, lay.num_vars),
        )
        return mat.tocsc()


def transcribe(problem: OcpProblem, grid: CollocationGrid) -> Nlp:
    """Discretize an optimal control problem on a collocation grid."""
    return Nlp(problem, grid)

"""Problem definitions for Bolza optimal control with a pluggable component map.

The dynamics and running cost take an extra vector argument g supplied by a
component function g(t, x, u, p), so the same problem can be evaluated under
different component models (a surrogate, a perturbed surrogate, a truth
model) without touching the dynamics. Arguments are packed in the fixed
order (x, u, p) and, where second derivatives are involved, (x, u, p, g).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np
from numpy.typing import NDArray

from .collocation import CollocationGrid, interpolate_nodal, interpolate_state


@dataclass(frozen=True)
class Dims:
    """Problem dimensions. n_y = n_x + n_u + n_p is the packed input size."""

    n_x: int
    n_u: int
    n_p: int
    n_g: int

    def __post_init__(self) -> None:
        if self.n_x < 1:
            raise ValueError("need at least one state")
        if min(self.n_u, self.n_p, self.n_g) < 0:
            raise ValueError("dimensions must be nonnegative")

    @property
    def n_y(self) -> int:
        return self.n_x + self.n_u + self.n_p

    @property
    def n_yg(self) -> int:
        """Size of the extended input (x, u, p, g) used by second derivatives."""
        return self.n_y + self.n_g

    @property
    def sx(self) -> slice:
        return slice(0, self.n_x)

    @property
    def su(self) -> slice:
        return slice(self.n_x, self.n_x + self.n_u)

    @property
    def sp(self) -> slice:
        return slice(self.n_x + self.n_u, self.n_y)

    @property
    def sg(self) -> slice:
        return slice(self.n_y, self.n_yg)


def pack_y(x: NDArray, u: NDArray, p: NDArray) -> NDArray:
    """Concatenate (x, u, p) in the packing order used everywhere."""
    return np.concatenate((x, u, p))


@runtime_checkable
class ComponentFunction(Protocol):
    """Smooth map g(t, y) with y = (x, u, p) packed.

    Implementations provide the value together with first and second
    derivatives in y; nothing in the toolkit requires third derivatives.
    """

    n_g: int

    def eval(self, t: float, y: NDArray) -> NDArray:
        """Value, shape (n_g,)."""
        ...

    def jac_y(self, t: float, y: NDArray) -> NDArray:
        """Jacobian, shape (n_g, n_y)."""
        ...

    def hess_yy(self, t: float, y: NDArray) -> NDArray:
        """Component Hessians, shape (n_g, n_y, n_y), each slice symmetric."""
        ...


@dataclass(frozen=True)
class CallableComponent:
    """Component function assembled from plain callables."""

    n_g: int
    eval_fn: Callable[[float, NDArray], NDArray]
    jac_fn: Callable[[float, NDArray], NDArray]
    hess_fn: Callable[[float, NDArray], NDArray]

    def eval(self, t: float, y: NDArray) -> NDArray:
        return np.asarray(self.eval_fn(t, y), dtype=float)

    def jac_y(self, t: float, y: NDArray) -> NDArray:
        return np.asarray(self.jac_fn(t, y), dtype=float)

    def hess_yy(self, t: float, y: NDArray) -> NDArray:
        return np.asarray(self.hess_fn(t, y), dtype=float)


@dataclass(frozen=True)
class CombinedComponent:
    """Linear combination sum_k c_k * g_k of component functions.

    Used to form perturbed models such as base + h * direction without
    re-deriving any derivatives.
    """

    terms: Sequence[tuple[float, ComponentFunction]]

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValueError("need at least one term")
        sizes = {g.n_g for _, g in self.terms}
        if len(sizes) != 1:
            raise ValueError(f"mismatched component sizes {sizes}")

    @property
    def n_g(self) -> int:
        return self.terms[0][1].n_g

    def eval(self, t: float, y: NDArray) -> NDArray:
        return sum(c * g.eval(t, y) for c, g in self.terms)

    def jac_y(self, t: float, y: NDArray) -> NDArray:
        return sum(c * g.jac_y(t, y) for c, g in self.terms)

    def hess_yy(self, t: float, y: NDArray) -> NDArray:
        return sum(c * g.hess_yy(t, y) for c, g in self.terms)


@dataclass(frozen=True)
class ProblemFunctions:
    """Dynamics, running cost, and terminal cost with analytic derivatives.

    Dynamics and running cost are functions of (t, y, g) where y is packed
    (x, u, p); their derivative callables return Jacobians/Hessians over the
    extended input (x, u, p, g). The terminal cost depends on (x_f, p) with
    derivatives over that concatenation.
    """

    dynamics: Callable[[float, NDArray, NDArray], NDArray]
    dynamics_jac: Callable[[float, NDArray, NDArray], NDArray]
    dynamics_hess: Callable[[float, NDArray, NDArray], NDArray]
    running_cost: Callable[[float, NDArray, NDArray], float]
    running_cost_grad: Callable[[float, NDArray, NDArray], NDArray]
    running_cost_hess: Callable[[float, NDArray, NDArray], NDArray]
    terminal_cost: Callable[[NDArray, NDArray], float]
    terminal_cost_grad: Callable[[NDArray, NDArray], NDArray]
    terminal_cost_hess: Callable[[NDArray, NDArray], NDArray]


@dataclass(frozen=True)
class QoiFunctions:
    """Quantity of interest in Bolza form: terminal part plus running part.

    Only first derivatives are ever needed. The running part may be None
    for purely terminal quantities; gradients follow the same packing as
    ProblemFunctions.
    """

    terminal: Callable[[NDArray, NDArray], float]
    terminal_grad: Callable[[NDArray, NDArray], NDArray]
    running: Optional[Callable[[float, NDArray, NDArray], float]] = None
    running_grad: Optional[Callable[[float, NDArray, NDArray], NDArray]] = None


@dataclass(frozen=True)
class Bounds:
    """Elementwise box bounds; None means unbounded on that side."""

    x_lower: Optional[NDArray] = None
    x_upper: Optional[NDArray] = None
    u_lower: Optional[NDArray] = None
    u_upper: Optional[NDArray] = None
    p_lower: Optional[NDArray] = None
    p_upper: Optional[NDArray] = None

    def any_finite(self) -> bool:
        for arr in (
            self.x_lower,
            self.x_upper,
            self.u_lower,
            self.u_upper,
            self.p_lower,
            self.p_upper,
        ):
            if arr is not None and np.any(np.isfinite(arr)):
                return True
        return False


@dataclass(frozen=True)
class OcpProblem:
    """Bolza problem: minimize terminal + integral cost subject to dynamics.

    Attributes:
        dims: Problem dimensions.
        horizon: (t0, tf) with tf > t0.
        x0: Initial state, shape (n_x,).
        funcs: Dynamics/cost callables.
        component: The component function g plugged into dynamics and cost.
        bounds: Optional box bounds applied at every grid point.
        terminal_state: Optional terminal equality target; NaN entries are
            free. Solution sensitivities are not defined for problems that
            pin terminal states.
        qoi: Optional quantity of interest evaluated on solutions.
    """

    dims: Dims
    horizon: tuple[float, float]
    x0: NDArray
    funcs: ProblemFunctions
    component: ComponentFunction
    bounds: Bounds = field(default_factory=Bounds)
    terminal_state: Optional[NDArray] = None
    qoi: Optional[QoiFunctions] = None

    def __post_init__(self) -> None:
        t0, tf = self.horizon
        if not tf > t0:
            raise ValueError(f"empty horizon ({t0}, {tf})")
        if np.asarray(self.x0).shape != (self.dims.n_x,):
            raise ValueError("x0 has wrong shape")
        if self.component.n_g != self.dims.n_g:
            raise ValueError(
                f"component returns {self.component.n_g} values, dims say {self.dims.n_g}"
            )

    def with_component(self, component: ComponentFunction) -> "OcpProblem":
        """Same problem under a different component model."""
        return OcpProblem(
            dims=self.dims,
            horizon=self.horizon,
            x0=self.x0,
            funcs=self.funcs,
            component=component,
            bounds=self.bounds,
            terminal_state=self.terminal_state,
            qoi=self.qoi,
        )


@dataclass
class Trajectory:
    """Discrete solution samples tied to a collocation grid.

    States live on the support grid, controls and costates on the node grid.
    Interpolation reproduces stored samples exactly at their own times.
    """

    grid: CollocationGrid
    states: NDArray
    controls: NDArray
    parameters: NDArray
    costates: Optional[NDArray] = None

    def state(self, t: float) -> NDArray:
        return interpolate_state(self.grid, self.states, t)

    def control(self, t: float) -> NDArray:
        return interpolate_nodal(self.grid, self.controls, t)

    def costate(self, t: float) -> NDArray:
        if self.costates is None:
            raise ValueError("trajectory carries no costates")
        return interpolate_nodal(self.grid, self.costates, t)

    def packed_input(self, t: float) -> NDArray:
        """(x, u, p) interpolated and packed at time t."""
        return pack_y(self.state(t), self.control(t), self.parameters)


def interpolate(traj: Trajectory, t: float) -> tuple[NDArray, NDArray]:
    """State and control of a trajectory at an arbitrary time."""
    return traj.state(t), traj.control(t)


def eval_composed_dynamics(problem: OcpProblem, t: float, y: NDArray) -> NDArray:
    """Dynamics with the problem's component substituted: f(t, y, g(t, y))."""
    g = problem.component.eval(t, y)
    return np.asarray(problem.funcs.dynamics(t, y, g), dtype=float)


def composed_jacobian(jac_yg: NDArray, g_y: NDArray, dims: Dims) -> NDArray:
    """Total y-Jacobian of a map evaluated at (y, g(y)).

    Args:
        jac_yg: Partial Jacobian over (x, u, p, g), shape (m, n_yg) or (n_yg,).
        g_y: Component Jacobian, shape (n_g, n_y).
        dims: Packing info.

    Returns:
        Array of shape (m, n_y) or (n_y,): the y-part plus the g-part
        propagated through g_y.
    """
    jac_yg = np.asarray(jac_yg)
    if jac_yg.ndim == 1:
        return jac_yg[dims.sx.start : dims.n_y] + g_y.T @ jac_yg[dims.sg]
    return jac_yg[..., : dims.n_y] + jac_yg[..., dims.sg] @ g_y


def composed_scalar_hessian(
    grad_yg: NDArray, hess_yg: NDArray, g_y: NDArray, g_yy: NDArray, dims: Dims
) -> NDArray:
    """Total y-Hessian of a scalar s(y, g(y)).

    Expands the chain rule fully: partial second derivatives, the mixed
    blocks propagated through g_y, the g-g block squeezed between g_y, and
    the component curvature g_yy weighted by the partial g-gradient.

    Args:
        grad_yg: Partial gradient, shape (n_yg,).
        hess_yg: Partial Hessian, shape (n_yg, n_yg), symmetric.
        g_y: Component Jacobian, shape (n_g, n_y).
        g_yy: Component Hessians, shape (n_g, n_y, n_y).
        dims: Packing info.

    Returns:
        Symmetric array of shape (n_y, n_y).
    """
    ny = dims.n_y
    s_yy = hess_yg[:ny, :ny]
    s_yg = hess_yg[:ny, dims.sg]
    s_gg = hess_yg[dims.sg, dims.sg]
    cross = s_yg @ g_y
    total = s_yy + cross + cross.T + g_y.T @ s_gg @ g_y
    total = total + np.tensordot(grad_yg[dims.sg], g_yy, axes=1)
    return total

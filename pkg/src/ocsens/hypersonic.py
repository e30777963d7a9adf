"""Hypersonic glide vehicle benchmark in normalized time.

States are downrange, altitude, speed, flight path angle, angle of attack,
and pitch rate; the control is elevon deflection and the single parameter
is the flight duration T. Aerodynamic coefficients enter as a pluggable
component function so that surrogate and perturbed truth models share the
vehicle dynamics. Two unit schemes are supported: base SI and kg/km/s,
which keeps trajectory magnitudes near one and the NLP well scaled.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import sympy
from numpy.typing import NDArray

from .problem import (
    Bounds,
    CallableComponent,
    ComponentFunction,
    Dims,
    OcpProblem,
    ProblemFunctions,
    QoiFunctions,
    Trajectory,
)

N_X = 6
N_U = 1
N_P = 1
N_G = 3
ALPHA_INDEX = 4
DELTA_INDEX = 6
DIMS = Dims(n_x=N_X, n_u=N_U, n_p=N_P, n_g=N_G)

_SCHEME_ALIASES = {
    "si": "si",
    "base-si": "si",
    "kgkms": "kgkms",
    "kg-km-s": "kgkms",
}
_METERS_PER_LENGTH_UNIT = {"si": 1.0, "kgkms": 1000.0}


def normalize_scheme(scheme: str) -> str:
    key = scheme.strip().lower()
    if key not in _SCHEME_ALIASES:
        raise ValueError(f"unknown unit scheme {scheme!r}; expected 'si' or 'kgkms'")
    return _SCHEME_ALIASES[key]


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the vehicle and atmosphere, in SI by default.

    in_units rescales every field consistently for a length unit of
    `length` meters (1000 for kg/km/s); mass and time units are unchanged.
    """

    mass: float = 1000.0
    pitch_inertia: float = 247.0
    wing_area: float = 4.4
    wing_chord: float = 3.6
    grav_parameter: float = 3.986e14
    earth_radius: float = 6.371e6
    sea_level_density: float = 1.225
    density_decay: float = 1.4e-4

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"VehicleParams.{name} must be positive, got {value}")

    def in_units(self, length: float) -> "VehicleParams":
        return VehicleParams(
            mass=self.mass,
            pitch_inertia=self.pitch_inertia / length**2,
            wing_area=self.wing_area / length**2,
            wing_chord=self.wing_chord / length,
            grav_parameter=self.grav_parameter / length**3,
            earth_radius=self.earth_radius / length,
            sea_level_density=self.sea_level_density * length**3,
            density_decay=self.density_decay * length,
        )

    def for_scheme(self, scheme: str) -> "VehicleParams":
        return self.in_units(_METERS_PER_LENGTH_UNIT[normalize_scheme(scheme)])


def state_scale(scheme: str) -> NDArray:
    """Multipliers converting SI state samples into the given scheme."""
    inv = 1.0 / _METERS_PER_LENGTH_UNIT[normalize_scheme(scheme)]
    return np.array([inv, inv, inv, 1.0, 1.0, 1.0])


def initial_state(scheme: str = "kgkms") -> NDArray:
    si = np.array([0.0, 80000.0, 5000.0, -5.0 * np.pi / 180.0, 11.0 * np.pi / 180.0, 0.0])
    return si * state_scale(scheme)


# -- aerodynamic models ------------------------------------------------------

_CL_COEF = (-0.04, 0.8, 0.13)
_CD_COEF = (0.012, -0.01, 0.6, -0.02, 0.12)
_CM_COEF = (0.1745, -1.0, -1.0)


@dataclass(frozen=True)
class AeroModel:
    """Polynomial lift/drag/moment coefficients in angle of attack and
    elevon deflection, with optional per-coefficient scale factors.

    The unscaled model is the surrogate; true_aero(eps) scales lift and
    moment by (1 + eps) and drag by (1 - eps).
    """

    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_g: int = N_G

    def coefficients(self, alpha: float, delta: float) -> NDArray:
        c_l = _CL_COEF[0] + _CL_COEF[1] * alpha + _CL_COEF[2] * delta
        c_d = (
            _CD_COEF[0]
            + _CD_COEF[1] * alpha
            + _CD_COEF[2] * alpha**2
            + _CD_COEF[3] * delta
            + _CD_COEF[4] * delta**2
        )
        c_m = _CM_COEF[0] + _CM_COEF[1] * alpha + _CM_COEF[2] * delta
        return np.array(self.scale) * np.array([c_l, c_d, c_m])

    def coefficient_partials(self, alpha: float, delta: float) -> NDArray:
        jac = np.array(
            [
                [_CL_COEF[1], _CL_COEF[2]],
                [_CD_COEF[1] + 2.0 * _CD_COEF[2] * alpha, _CD_COEF[3] + 2.0 * _CD_COEF[4] * delta],
                [_CM_COEF[1], _CM_COEF[2]],
            ]
        )
        return np.array(self.scale)[:, None] * jac

    def coefficient_curvature(self) -> NDArray:
        hess = np.zeros((N_G, 2, 2))
        hess[1, 0, 0] = 2.0 * _CD_COEF[2]
        hess[1, 1, 1] = 2.0 * _CD_COEF[4]
        return np.array(self.scale)[:, None, None] * hess

    # ComponentFunction interface over packed y = (x, u, p).

    def eval(self, t: float, y: NDArray) -> NDArray:
        return self.coefficients(y[ALPHA_INDEX], y[DELTA_INDEX])

    def jac_y(self, t: float, y: NDArray) -> NDArray:
        jac = np.zeros((N_G, y.size))
        partials = self.coefficient_partials(y[ALPHA_INDEX], y[DELTA_INDEX])
        jac[:, ALPHA_INDEX] = partials[:, 0]
        jac[:, DELTA_INDEX] = partials[:, 1]
        return jac

    def hess_yy(self, t: float, y: NDArray) -> NDArray:
        hess = np.zeros((N_G, y.size, y.size))
        curv = self.coefficient_curvature()
        idx = (ALPHA_INDEX, DELTA_INDEX)
        for a, ia in enumerate(idx):
            for b, ib in enumerate(idx):
                hess[:, ia, ib] = curv[:, a, b]
        return hess


def surrogate_aero() -> AeroModel:
    return AeroModel()


def true_aero(eps: float) -> AeroModel:
    return AeroModel(scale=(1.0 + eps, 1.0 - eps, 1.0 + eps))


def aero_coeffs(model: AeroModel, alpha: float, delta: float) -> tuple[NDArray, NDArray]:
    """Coefficient vector (C_L, C_D, C_M) and its Jacobian in (alpha, delta)."""
    return model.coefficients(alpha, delta), model.coefficient_partials(alpha, delta)


# -- vehicle dynamics --------------------------------------------------------


def _dynamic_pressure(params: VehicleParams, altitude, v, module=np):
    density = params.sea_level_density * module.exp(-params.density_decay * altitude)
    return 0.5 * density * v**2


def hypersonic_dynamics(
    params: VehicleParams, model: AeroModel, state: NDArray, control: float
) -> NDArray:
    """Physical-time state derivative; rejects nonpositive speed."""
    x1, x2, v, gamma, alpha, q = np.asarray(state, dtype=float)
    if v <= 0:
        raise ValueError(f"vehicle speed must be positive, got {v}")
    c_l, c_d, c_m = model.coefficients(alpha, float(np.asarray(control).reshape(-1)[0]))
    qbar = _dynamic_pressure(params, x2, v)
    lift = qbar * c_l * params.wing_area
    drag = qbar * c_d * params.wing_area
    moment = qbar * c_m * params.wing_area * params.wing_chord
    radius = params.earth_radius + x2
    grav = params.grav_parameter / radius**2
    m = params.mass
    gamma_dot = (lift - m * grav * np.cos(gamma) + m * v**2 * np.cos(gamma) / radius) / (m * v)
    return np.array(
        [
            v * np.cos(gamma),
            v * np.sin(gamma),
            -(drag + m * grav * np.sin(gamma)) / m,
            gamma_dot,
            q - gamma_dot,
            moment / params.pitch_inertia,
        ]
    )


@lru_cache(maxsize=8)
def _normalized_dynamics(params: VehicleParams):
    """Sympy-generated value/Jacobian/Hessian of T * f_physical over
    z = (x1, x2, v, gamma, alpha, q, delta, T, g1, g2, g3)."""
    x1, x2, v, gamma, alpha, q, delta, duration = sympy.symbols(
        "x1 x2 v gamma alpha q delta duration", real=True
    )
    g1, g2, g3 = sympy.symbols("g1 g2 g3", real=True)
    z = (x1, x2, v, gamma, alpha, q, delta, duration, g1, g2, g3)

    radius = params.earth_radius + x2
    grav = params.grav_parameter / radius**2
    qbar = _dynamic_pressure(params, x2, v, module=sympy)
    lift = qbar * g1 * params.wing_area
    drag = qbar * g2 * params.wing_area
    moment = qbar * g3 * params.wing_area * params.wing_chord
    m = params.mass
    gamma_dot = (lift - m * grav * sympy.cos(gamma) + m * v**2 * sympy.cos(gamma) / radius) / (m * v)
    f_phys = sympy.Matrix(
        [
            v * sympy.cos(gamma),
            v * sympy.sin(gamma),
            -(drag + m * grav * sympy.sin(gamma)) / m,
            gamma_dot,
            q - gamma_dot,
            moment / params.pitch_inertia,
        ]
    )
    f = duration * f_phys
    jac = f.jacobian(z)
    hessians = [sympy.hessian(f[k], z) for k in range(N_X)]

    value_fn = sympy.lambdify(z, f, modules="numpy", cse=True)
    jac_fn = sympy.lambdify(z, jac, modules="numpy", cse=True)
    hess_fn = sympy.lambdify(z, hessians, modules="numpy", cse=True)
    return value_fn, jac_fn, hess_fn


def _problem_functions(
    params: VehicleParams,
    running_cost: Optional[tuple[Callable, Callable, Callable]] = None,
    terminal_cost: Optional[tuple[Callable, Callable, Callable]] = None,
) -> ProblemFunctions:
    value_fn, jac_fn, hess_fn = _normalized_dynamics(params)
    n_yg = DIMS.n_yg

    def dynamics(t, y, g):
        return np.asarray(value_fn(*np.asarray(y, dtype=float), *np.asarray(g, dtype=float))).ravel()

    def dynamics_jac(t, y, g):
        return np.asarray(jac_fn(*np.asarray(y, dtype=float), *np.asarray(g, dtype=float)), dtype=float)

    def dynamics_hess(t, y, g):
        blocks = hess_fn(*np.asarray(y, dtype=float), *np.asarray(g, dtype=float))
        return np.stack([np.asarray(b, dtype=float) for b in blocks])

    if running_cost is None:
        running_cost = (
            lambda t, y, g: 0.0,
            lambda t, y, g: np.zeros(n_yg),
            lambda t, y, g: np.zeros((n_yg, n_yg)),
        )
    if terminal_cost is None:
        terminal_cost = (
            lambda x, p: 0.0,
            lambda x, p: np.zeros(N_X + N_P),
            lambda x, p: np.zeros((N_X + N_P, N_X + N_P)),
        )
    return ProblemFunctions(
        dynamics=dynamics,
        dynamics_jac=dynamics_jac,
        dynamics_hess=dynamics_hess,
        running_cost=running_cost[0],
        running_cost_grad=running_cost[1],
        running_cost_hess=running_cost[2],
        terminal_cost=terminal_cost[0],
        terminal_cost_grad=terminal_cost[1],
        terminal_cost_hess=terminal_cost[2],
    )


def downrange_qoi() -> QoiFunctions:
    """Final downrange x1(1) as the quantity of interest."""
    grad = np.zeros(N_X + N_P)
    grad[0] = 1.0
    return QoiFunctions(
        terminal=lambda x, p: float(x[0]),
        terminal_grad=lambda x, p: grad.copy(),
    )


def _scheme_bounds(scheme: str) -> Bounds:
    s = state_scale(scheme)
    deg = np.pi / 180.0
    return Bounds(
        x_lower=np.array([-np.inf, 0.0, 1.0 * s[2], -30.0 * deg, 0.0, -np.inf]),
        x_upper=np.array([np.inf, 81000.0 * s[1], 6000.0 * s[2], 30.0 * deg, 20.0 * deg, np.inf]),
        u_lower=np.array([-20.0 * deg]),
        u_upper=np.array([20.0 * deg]),
        p_lower=np.array([1000.0]),
        p_upper=np.array([3000.0]),
    )


def build_max_downrange(
    scheme: str = "kgkms",
    params: Optional[VehicleParams] = None,
    model: Optional[ComponentFunction] = None,
) -> OcpProblem:
    """Maximum-downrange glide in normalized time with duration T free.

    Minimizes -x1(1); all states, the elevon, and T carry the benchmark
    box constraints.
    """
    scheme = normalize_scheme(scheme)
    params = (params or VehicleParams()).for_scheme(scheme)
    grad = np.zeros(N_X + N_P)
    grad[0] = -1.0
    terminal = (
        lambda x, p: -float(x[0]),
        lambda x, p: grad.copy(),
        lambda x, p: np.zeros((N_X + N_P, N_X + N_P)),
    )
    return OcpProblem(
        dims=DIMS,
        horizon=(0.0, 1.0),
        x0=initial_state(scheme),
        funcs=_problem_functions(params, terminal_cost=terminal),
        component=model if model is not None else surrogate_aero(),
        bounds=_scheme_bounds(scheme),
        qoi=downrange_qoi(),
    )


def max_downrange_guess(nlp) -> NDArray:
    """Start point for the downrange solve: the initial state held
    constant, zero elevon, and T at the middle of its range."""
    return nlp.constant_guess(control=np.zeros(N_U), parameters=np.array([2000.0]))


def downrange_scaling(nlp, scheme: str = "kgkms") -> NDArray:
    """Characteristic variable magnitudes for the downrange solve.

    The raw decision vector mixes thousands of kilometres with hundredths
    of a radian per second; scaling each component to order one keeps the
    KKT systems well conditioned.
    """
    s = state_scale(scheme)
    state = np.array([4.0e6 * s[0], 8.0e4 * s[1], 5.0e3 * s[2], 0.5, 0.35, 0.1])
    return nlp.layout.scaling_vector(state, np.array([0.35]), np.array([2000.0]))


TRACKING_STATE_WEIGHTS = np.array([1e-3, 1e1, 0.0, 0.0, 1e1, 0.0])
TRACKING_CONTROL_WEIGHT = 1e8
TRACKING_PARAM_WEIGHT = 1e-3


def build_tracking(
    reference: Trajectory,
    scheme: str = "kgkms",
    params: Optional[VehicleParams] = None,
    model: Optional[ComponentFunction] = None,
) -> OcpProblem:
    """Reference-tracking problem whose optimum is the reference itself.

    The quadratic weights are calibrated for kg/km/s magnitudes; length
    entries are rescaled for other schemes. No inequality constraints, so
    the solution is a bound-free stationary point suitable for the
    sensitivity machinery.
    """
    scheme = normalize_scheme(scheme)
    if not (np.isclose(reference.grid.t0, 0.0) and np.isclose(reference.grid.tf, 1.0)):
        raise ValueError("tracking reference must live on normalized time [0, 1]")
    params = (params or VehicleParams()).for_scheme(scheme)
    length_ratio = _METERS_PER_LENGTH_UNIT[scheme] / _METERS_PER_LENGTH_UNIT["kgkms"]
    q_weights = TRACKING_STATE_WEIGHTS * np.array([length_ratio**2] * 3 + [1.0] * 3)
    r_u = TRACKING_CONTROL_WEIGHT
    r_p = TRACKING_PARAM_WEIGHT
    t_ref = float(reference.parameters[0])
    n_yg = DIMS.n_yg

    def running_cost(t, y, g):
        dx = y[:N_X] - reference.state(t)
        du = y[N_X] - reference.control(t)[0]
        return float(dx @ (q_weights * dx) + r_u * du * du)

    def running_cost_grad(t, y, g):
        grad = np.zeros(n_yg)
        grad[:N_X] = 2.0 * q_weights * (y[:N_X] - reference.state(t))
        grad[N_X] = 2.0 * r_u * (y[N_X] - reference.control(t)[0])
        return grad

    hess_const = np.zeros((n_yg, n_yg))
    hess_const[:N_X, :N_X] = np.diag(2.0 * q_weights)
    hess_const[N_X, N_X] = 2.0 * r_u

    def terminal_cost(x, p):
        return float(r_p * (p[0] - t_ref) ** 2)

    def terminal_cost_grad(x, p):
        grad = np.zeros(N_X + N_P)
        grad[N_X] = 2.0 * r_p * (p[0] - t_ref)
        return grad

    term_hess = np.zeros((N_X + N_P, N_X + N_P))
    term_hess[N_X, N_X] = 2.0 * r_p

    return OcpProblem(
        dims=DIMS,
        horizon=(0.0, 1.0),
        x0=reference.states[0].copy(),
        funcs=_problem_functions(
            params,
            running_cost=(running_cost, running_cost_grad, lambda t, y, g: hess_const.copy()),
            terminal_cost=(terminal_cost, terminal_cost_grad, lambda x, p: term_hess.copy()),
        ),
        component=model if model is not None else surrogate_aero(),
        bounds=Bounds(),
        qoi=downrange_qoi(),
    )


# -- unit scaling ------------------------------------------------------------


@dataclass(frozen=True)
class UnitMaps:
    """Elementwise multipliers from base-SI samples to scheme samples."""

    state_scale: NDArray
    control_scale: NDArray
    param_scale: NDArray
    cost_scale: float

    def scale_trajectory(self, traj: Trajectory) -> Trajectory:
        costates = None
        if traj.costates is not None:
            costates = traj.costates * (self.cost_scale / self.state_scale)[None, :]
        return Trajectory(
            grid=traj.grid,
            states=traj.states * self.state_scale[None, :],
            controls=traj.controls * self.control_scale[None, :],
            parameters=traj.parameters * self.param_scale,
            costates=costates,
        )

    def unscale_trajectory(self, traj: Trajectory) -> Trajectory:
        inverse = UnitMaps(
            state_scale=1.0 / self.state_scale,
            control_scale=1.0 / self.control_scale,
            param_scale=1.0 / self.param_scale,
            cost_scale=1.0 / self.cost_scale,
        )
        return inverse.scale_trajectory(traj)


def _scale_problem(problem: OcpProblem, maps: UnitMaps) -> OcpProblem:
    dims = problem.dims
    s_x = maps.state_scale
    s_y = np.concatenate((s_x, maps.control_scale, maps.param_scale))
    s_z = np.concatenate((s_y, np.ones(dims.n_g)))
    s_xp = np.concatenate((s_x, maps.param_scale))
    c = maps.cost_scale
    funcs = problem.funcs
    comp = problem.component

    def unscale_y(y):
        return np.asarray(y) / s_y

    scaled_funcs = ProblemFunctions(
        dynamics=lambda t, y, g: s_x * funcs.dynamics(t, unscale_y(y), g),
        dynamics_jac=lambda t, y, g: s_x[:, None] * funcs.dynamics_jac(t, unscale_y(y), g) / s_z[None, :],
        dynamics_hess=lambda t, y, g: s_x[:, None, None]
        * funcs.dynamics_hess(t, unscale_y(y), g)
        / (s_z[None, :, None] * s_z[None, None, :]),
        running_cost=lambda t, y, g: c * funcs.running_cost(t, unscale_y(y), g),
        running_cost_grad=lambda t, y, g: c * funcs.running_cost_grad(t, unscale_y(y), g) / s_z,
        running_cost_hess=lambda t, y, g: c
        * funcs.running_cost_hess(t, unscale_y(y), g)
        / (s_z[:, None] * s_z[None, :]),
        terminal_cost=lambda x, p: c * funcs.terminal_cost(x / s_x, p / maps.param_scale),
        terminal_cost_grad=lambda x, p: c * funcs.terminal_cost_grad(x / s_x, p / maps.param_scale) / s_xp,
        terminal_cost_hess=lambda x, p: c
        * funcs.terminal_cost_hess(x / s_x, p / maps.param_scale)
        / (s_xp[:, None] * s_xp[None, :]),
    )
    scaled_component = CallableComponent(
        n_g=dims.n_g,
        eval_fn=lambda t, y: comp.eval(t, unscale_y(y)),
        jac_fn=lambda t, y: comp.jac_y(t, unscale_y(y)) / s_y[None, :],
        hess_fn=lambda t, y: comp.hess_yy(t, unscale_y(y)) / (s_y[None, :, None] * s_y[None, None, :]),
    )
    bounds = Bounds(
        x_lower=None if problem.bounds.x_lower is None else problem.bounds.x_lower * s_x,
        x_upper=None if problem.bounds.x_upper is None else problem.bounds.x_upper * s_x,
        u_lower=None if problem.bounds.u_lower is None else problem.bounds.u_lower * maps.control_scale,
        u_upper=None if problem.bounds.u_upper is None else problem.bounds.u_upper * maps.control_scale,
        p_lower=None if problem.bounds.p_lower is None else problem.bounds.p_lower * maps.param_scale,
        p_upper=None if problem.bounds.p_upper is None else problem.bounds.p_upper * maps.param_scale,
    )
    qoi = problem.qoi
    scaled_qoi = None
    if qoi is not None:
        scaled_qoi = QoiFunctions(
            terminal=lambda x, p: c * qoi.terminal(x / s_x, p / maps.param_scale),
            terminal_grad=lambda x, p: c * qoi.terminal_grad(x / s_x, p / maps.param_scale) / s_xp,
            running=None
            if qoi.running is None
            else (lambda t, y, g: c * qoi.running(t, unscale_y(y), g)),
            running_grad=None
            if qoi.running_grad is None
            else (lambda t, y, g: c * qoi.running_grad(t, unscale_y(y), g) / s_z),
        )
    terminal_state = None
    if problem.terminal_state is not None:
        terminal_state = problem.terminal_state * s_x
    return OcpProblem(
        dims=dims,
        horizon=problem.horizon,
        x0=problem.x0 * s_x,
        funcs=scaled_funcs,
        component=scaled_component,
        bounds=bounds,
        terminal_state=terminal_state,
        qoi=scaled_qoi,
    )


def unit_scaling(problem: OcpProblem, scheme: str) -> tuple[OcpProblem, UnitMaps]:
    """Rescale a base-SI hypersonic problem into the given unit scheme.

    Returns the scaled problem and the trajectory maps; the cost is scaled
    like a length so objectives stay comparable across schemes.
    """
    scheme = normalize_scheme(scheme)
    s = state_scale(scheme)
    maps = UnitMaps(
        state_scale=s,
        control_scale=np.ones(N_U),
        param_scale=np.ones(N_P),
        cost_scale=s[0],
    )
    return _scale_problem(problem, maps), maps

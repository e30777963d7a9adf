"""Small control problems with known solutions, shared across the suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ocsens.problem import (
    Bounds,
    CallableComponent,
    ComponentFunction,
    Dims,
    OcpProblem,
    ProblemFunctions,
    QoiFunctions,
)
from ocsens.solver import solve
from ocsens.collocation import uniform_grid
from ocsens.transcription import transcribe

TANH1 = 0.7615941559557649
LQ_OBJECTIVE = 0.3807970779778824


def lq_state(t):
    """Optimal state cosh(1 - t) / cosh(1) of the scalar regulator."""
    return np.cosh(1.0 - np.asarray(t)) / np.cosh(1.0)


def lq_costate(t):
    """Optimal costate sinh(1 - t) / cosh(1) of the scalar regulator."""
    return np.sinh(1.0 - np.asarray(t)) / np.cosh(1.0)


def lq_forward_state(t):
    """State response sinh(t) / cosh(1) to a unit shift of the model."""
    return np.sinh(np.asarray(t)) / np.cosh(1.0)


def lq_forward_costate(t):
    """Costate response 1 - cosh(t) / cosh(1) to a unit shift of the model."""
    return 1.0 - np.cosh(np.asarray(t)) / np.cosh(1.0)


def lq_adjoint_state(t):
    """Adjoint state -sinh(t) / cosh(1) for the terminal value of x."""
    return -np.sinh(np.asarray(t)) / np.cosh(1.0)


def lq_adjoint_costate(t):
    """Adjoint costate cosh(t) / cosh(1) for the terminal value of x."""
    return np.cosh(np.asarray(t)) / np.cosh(1.0)


def constant_component(value: float, n_g: int = 1) -> CallableComponent:
    vals = np.full(n_g, float(value))
    return CallableComponent(
        n_g=n_g,
        eval_fn=lambda t, y: vals.copy(),
        jac_fn=lambda t, y: np.zeros((n_g, y.size)),
        hess_fn=lambda t, y: np.zeros((n_g, y.size, y.size)),
    )


def lq_problem(
    model: Optional[ComponentFunction] = None,
    bounds: Optional[Bounds] = None,
    terminal_state: Optional[np.ndarray] = None,
) -> OcpProblem:
    """Regulator x' = u + g, cost (x^2 + u^2) / 2, x(0) = 1, QoI x(1)."""
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
    kwargs = {}
    if bounds is not None:
        kwargs["bounds"] = bounds
    if terminal_state is not None:
        kwargs["terminal_state"] = terminal_state
    return OcpProblem(
        dims=Dims(n_x=1, n_u=1, n_p=0, n_g=1),
        horizon=(0.0, 1.0),
        x0=np.array([1.0]),
        funcs=funcs,
        component=model if model is not None else constant_component(0.0),
        qoi=qoi,
        **kwargs,
    )


def solved_lq(intervals: int = 16, nodes: int = 4, model=None):
    """Transcribe and solve the regulator, returning the pieces tests reuse."""
    nlp = transcribe(lq_problem(model=model), uniform_grid(intervals, nodes))
    sol = solve(nlp, nlp.constant_guess())
    assert sol.status == "optimal", sol.status
    return nlp, sol


def chain_rule_problem() -> OcpProblem:
    """Feedback model g = x^2 entering x' = g + u, terminal cost x(1).

    The state block of the condensed Hamiltonian Hessian equals twice the
    costate at every node, which isolates the second order term of the
    model composition.
    """
    funcs = ProblemFunctions(
        dynamics=lambda t, y, g: np.array([g[0] + y[1]]),
        dynamics_jac=lambda t, y, g: np.array([[0.0, 1.0, 1.0]]),
        dynamics_hess=lambda t, y, g: np.zeros((1, 3, 3)),
        running_cost=lambda t, y, g: y[1] ** 2,
        running_cost_grad=lambda t, y, g: np.array([0.0, 2.0 * y[1], 0.0]),
        running_cost_hess=lambda t, y, g: np.diag([0.0, 2.0, 0.0]),
        terminal_cost=lambda x, p: float(x[0]),
        terminal_cost_grad=lambda x, p: np.array([1.0]),
        terminal_cost_hess=lambda x, p: np.zeros((1, 1)),
    )
    square = CallableComponent(
        n_g=1,
        eval_fn=lambda t, y: np.array([y[0] ** 2]),
        jac_fn=lambda t, y: np.array([[2.0 * y[0], 0.0]]),
        hess_fn=lambda t, y: np.array([[[2.0, 0.0], [0.0, 0.0]]]),
    )
    return OcpProblem(
        dims=Dims(n_x=1, n_u=1, n_p=0, n_g=1),
        horizon=(0.0, 1.0),
        x0=np.array([0.5]),
        funcs=funcs,
        component=square,
    )


def double_integrator_problem() -> OcpProblem:
    """Minimum effort rest-to-rest transfer; the optimal cost is 12."""
    funcs = ProblemFunctions(
        dynamics=lambda t, y, g: np.array([y[1], y[2]]),
        dynamics_jac=lambda t, y, g: np.array(
            [[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]
        ),
        dynamics_hess=lambda t, y, g: np.zeros((2, 4, 4)),
        running_cost=lambda t, y, g: y[2] ** 2,
        running_cost_grad=lambda t, y, g: np.array([0.0, 0.0, 2.0 * y[2], 0.0]),
        running_cost_hess=lambda t, y, g: np.diag([0.0, 0.0, 2.0, 0.0]),
        terminal_cost=lambda x, p: 0.0,
        terminal_cost_grad=lambda x, p: np.zeros(2),
        terminal_cost_hess=lambda x, p: np.zeros((2, 2)),
    )
    return OcpProblem(
        dims=Dims(n_x=2, n_u=1, n_p=0, n_g=1),
        horizon=(0.0, 1.0),
        x0=np.array([0.0, 0.0]),
        funcs=funcs,
        component=constant_component(0.0),
        terminal_state=np.array([1.0, 0.0]),
    )


def exponential_problem() -> OcpProblem:
    """Pure quadrature test case x' = g with the identity model g = x."""
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


def exponential_endpoint_error(intervals: int, nodes: int) -> float:
    nlp = transcribe(exponential_problem(), uniform_grid(intervals, nodes))
    sol = solve(nlp, nlp.constant_guess())
    assert sol.status == "optimal", sol.status
    traj = nlp.unpack(sol.primal, sol.multipliers)
    return abs(float(traj.states[-1, 0]) - float(np.e))


def infeasible_problem() -> OcpProblem:
    """Frozen state with an unreachable terminal pin."""
    funcs = ProblemFunctions(
        dynamics=lambda t, y, g: np.array([0.0]),
        dynamics_jac=lambda t, y, g: np.zeros((1, 2)),
        dynamics_hess=lambda t, y, g: np.zeros((1, 2, 2)),
        running_cost=lambda t, y, g: 0.0,
        running_cost_grad=lambda t, y, g: np.zeros(2),
        running_cost_hess=lambda t, y, g: np.zeros((2, 2)),
        terminal_cost=lambda x, p: 0.0,
        terminal_cost_grad=lambda x, p: np.zeros(1),
        terminal_cost_hess=lambda x, p: np.zeros((1, 1)),
    )
    return OcpProblem(
        dims=Dims(n_x=1, n_u=0, n_p=0, n_g=1),
        horizon=(0.0, 1.0),
        x0=np.array([1.0]),
        funcs=funcs,
        component=constant_component(0.0),
        terminal_state=np.array([0.0]),
    )


def random_aero_direction(rng: np.random.Generator) -> CallableComponent:
    """Aero-shaped perturbation, affine in angle of attack, elevon, and time."""
    a = rng.normal(size=3)
    b = rng.normal(size=3)
    c = rng.normal(size=3)
    d = rng.normal(size=3)

    def eval_fn(t, y):
        return a + b * y[4] + c * y[6] + d * np.sin(t)

    def jac_fn(t, y):
        jac = np.zeros((3, y.size))
        jac[:, 4] = b
        jac[:, 6] = c
        return jac

    return CallableComponent(
        n_g=3,
        eval_fn=eval_fn,
        jac_fn=jac_fn,
        hess_fn=lambda t, y: np.zeros((3, y.size, y.size)),
    )


@dataclass
class _FlatLayout:
    num_vars: int
    num_cons: int


class QuadraticProgram:
    """Dense equality-constrained QP exposing the solver's problem interface.

    Minimizes w' Q w / 2 + c' w subject to A w = b and optional simple
    bounds; small enough that the expected solutions are hand-checkable.
    """

    def __init__(self, quad, lin, cons, rhs, lower=None, upper=None):
        self.quad = np.atleast_2d(np.asarray(quad, dtype=float))
        self.lin = np.asarray(lin, dtype=float)
        n = self.lin.size
        self.cons = np.asarray(cons, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(rhs, dtype=float)
        self.layout = _FlatLayout(num_vars=n, num_cons=self.rhs.size)
        self.lower = (
            np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        )
        self.upper = (
            np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
        )

    def objective(self, w):
        return float(0.5 * w @ self.quad @ w + self.lin @ w)

    def gradient(self, w):
        return self.quad @ w + self.lin

    def constraints(self, w):
        return self.cons @ w - self.rhs

    def jacobian(self, w):
        return sp.csr_matrix(self.cons)

    def lagrangian_hessian(self, w, nu):
        return sp.csr_matrix(self.quad)

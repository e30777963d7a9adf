"""Packing, model composition, and trajectory containers."""

import numpy as np
import pytest

import toys
from ocsens.collocation import uniform_grid
from ocsens.problem import (
    Bounds,
    CallableComponent,
    CombinedComponent,
    Dims,
    composed_jacobian,
    composed_scalar_hessian,
    eval_composed_dynamics,
    interpolate,
    pack_y,
)
from ocsens.derivative_check import central_difference_jacobian


def test_dims_slices_partition_the_packed_vector():
    dims = Dims(n_x=2, n_u=1, n_p=1, n_g=3)
    assert dims.n_y == 4
    assert dims.n_yg == 7
    assert dims.sx == slice(0, 2)
    assert dims.su == slice(2, 3)
    assert dims.sp == slice(3, 4)
    assert dims.sg == slice(4, 7)


def test_pack_y_concatenates_in_declared_order():
    y = pack_y(np.array([1.0, 2.0]), np.array([3.0]), np.array([4.0]))
    assert np.array_equal(y, [1.0, 2.0, 3.0, 4.0])


def test_callable_component_passthrough():
    comp = toys.constant_component(2.5, n_g=2)
    y = np.zeros(3)
    assert comp.n_g == 2
    assert np.array_equal(comp.eval(0.0, y), [2.5, 2.5])
    assert comp.jac_y(0.0, y).shape == (2, 3)
    assert comp.hess_yy(0.0, y).shape == (2, 3, 3)


def test_combined_component_is_the_weighted_sum():
    def affine(scale):
        return CallableComponent(
            n_g=2,
            eval_fn=lambda t, y: scale * np.array([y[0], t]),
            jac_fn=lambda t, y: scale * np.array([[1.0, 0.0], [0.0, 0.0]]),
            hess_fn=lambda t, y: scale * np.ones((2, 2, 2)),
        )

    combo = CombinedComponent([(2.0, affine(1.0)), (-0.5, affine(4.0))])
    y = np.array([3.0, 7.0])
    assert combo.n_g == 2
    assert np.allclose(combo.eval(1.5, y), (2.0 - 2.0) * np.array([3.0, 1.5]))
    assert np.allclose(combo.jac_y(1.5, y), np.zeros((2, 2)))
    assert np.allclose(combo.hess_yy(1.5, y), np.zeros((2, 2, 2)))


def test_combined_component_rejects_mismatched_sizes():
    a = toys.constant_component(1.0, n_g=1)
    b = toys.constant_component(1.0, n_g=2)
    with pytest.raises(ValueError):
        CombinedComponent([(1.0, a), (1.0, b)])


def test_composed_jacobian_chains_through_the_model():
    dims = Dims(n_x=1, n_u=1, n_p=0, n_g=1)
    jac_yg = np.array([[1.0, 2.0, 3.0]])
    g_y = np.array([[4.0, 5.0]])
    full = composed_jacobian(jac_yg, g_y, dims)
    assert np.allclose(full, [[1.0 + 12.0, 2.0 + 15.0]])


def test_composed_scalar_hessian_includes_model_curvature():
    dims = Dims(n_x=1, n_u=1, n_p=0, n_g=1)
    grad_yg = np.array([0.0, 0.0, 3.0])
    hess_yg = np.zeros((3, 3))
    x = 0.7
    g_y = np.array([[2.0 * x, 0.0]])
    g_yy = np.array([[[2.0, 0.0], [0.0, 0.0]]])
    hess = composed_scalar_hessian(grad_yg, hess_yg, g_y, g_yy, dims)
    assert np.allclose(hess, [[6.0, 0.0], [0.0, 0.0]])


def test_composed_scalar_hessian_matches_finite_differences():
    rng = np.random.default_rng(7)
    dims = Dims(n_x=2, n_u=1, n_p=0, n_g=2)
    quad = rng.normal(size=(5, 5))
    quad = 0.5 * (quad + quad.T)
    lin = rng.normal(size=5)

    def model_val(y):
        return np.array([np.sin(y[0]) + y[2], y[1] * y[2]])

    def model_jac(y):
        return np.array([[np.cos(y[0]), 0.0, 1.0], [0.0, y[2], y[1]]])

    def model_hess(y):
        hess = np.zeros((2, 3, 3))
        hess[0, 0, 0] = -np.sin(y[0])
        hess[1, 1, 2] = 1.0
        hess[1, 2, 1] = 1.0
        return hess

    def scalar(y):
        z = np.concatenate([y, model_val(y)])
        return float(0.5 * z @ quad @ z + lin @ z)

    def scalar_grad(y):
        z = np.concatenate([y, model_val(y)])
        grad_z = quad @ z + lin
        return grad_z[:3] + model_jac(y).T @ grad_z[3:]

    y0 = rng.normal(size=3)
    z0 = np.concatenate([y0, model_val(y0)])
    analytic = composed_scalar_hessian(
        quad @ z0 + lin, quad, model_jac(y0), model_hess(y0), dims
    )
    numeric = central_difference_jacobian(scalar_grad, y0, step=1e-6)
    assert np.max(np.abs(analytic - numeric)) < 1e-7
    assert np.max(np.abs(analytic - analytic.T)) < 1e-12


def test_eval_composed_dynamics_feeds_model_into_rhs():
    problem = toys.lq_problem(model=toys.constant_component(0.25))
    y = np.array([0.3, -0.1])
    rhs = eval_composed_dynamics(problem, 0.0, y)
    assert np.allclose(rhs, [-0.1 + 0.25])


def test_bounds_default_to_unbounded():
    bounds = Bounds()
    assert bounds.x_lower is None and bounds.x_upper is None
    assert bounds.u_lower is None and bounds.u_upper is None
    assert bounds.p_lower is None and bounds.p_upper is None


def test_trajectory_interpolation_matches_closed_forms():
    nlp, sol = toys.solved_lq(16, 4)
    traj = nlp.unpack(sol.primal, sol.multipliers)
    for t in (0.0, 0.3, 0.77, 1.0):
        assert abs(traj.state(t)[0] - toys.lq_state(t)) < 1e-7
        assert abs(traj.costate(t)[0] - toys.lq_costate(t)) < 1e-6
        assert abs(traj.control(t)[0] + toys.lq_costate(t)) < 1e-6
    state, control = interpolate(traj, 0.4)
    assert np.array_equal(state, traj.state(0.4))
    assert np.array_equal(control, traj.control(0.4))


def test_trajectory_packed_input_concatenates_fields():
    nlp, sol = toys.solved_lq(4, 3)
    traj = nlp.unpack(sol.primal, sol.multipliers)
    y = traj.packed_input(0.3)
    assert y.shape == (2,)
    assert y[0] == traj.state(0.3)[0]
    assert y[1] == traj.control(0.3)[0]


def test_trajectory_shapes_follow_grid():
    grid = uniform_grid(4, 3)
    nlp, sol = toys.solved_lq(4, 3)
    traj = nlp.unpack(sol.primal, sol.multipliers)
    assert traj.states.shape == (grid.support_times.size, 1)
    assert traj.controls.shape == (grid.node_times.size, 1)
    assert traj.costates.shape == (grid.node_times.size, 1)
    assert traj.parameters.shape == (0,)

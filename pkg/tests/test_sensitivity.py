"""Forward solution sensitivities against closed forms and refusal paths."""

import dataclasses

import numpy as np
import pytest

import toys
from ocsens.collocation import uniform_grid
from ocsens.problem import Bounds, CallableComponent
from ocsens.sensitivity import (
    PerturbationData,
    assemble_lq_data,
    forward_qoi_derivative,
    sample_perturbation,
    solve_sensitivity,
)
from ocsens.solver import solve
from ocsens.transcription import transcribe


@pytest.fixture(scope="module")
def lq_setup():
    nlp, sol = toys.solved_lq(16, 4)
    lq = assemble_lq_data(nlp, sol)
    pert = sample_perturbation(lq.base, toys.constant_component(1.0))
    return nlp, sol, lq, pert


def test_forward_state_response_matches_closed_form(lq_setup):
    _, _, lq, pert = lq_setup
    delta = solve_sensitivity(lq, pert)
    support = lq.grid.support_times
    nodes = lq.grid.node_times
    assert delta.dx[0, 0] == 0.0
    assert np.max(np.abs(delta.dx[:, 0] - toys.lq_forward_state(support))) < 1e-7
    assert np.max(np.abs(delta.dlam[:, 0] - toys.lq_forward_costate(nodes))) < 1e-6
    assert np.max(np.abs(delta.du[:, 0] + delta.dlam[:, 0])) < 1e-10
    assert delta.dp.shape == (0,)


def test_forward_qoi_derivative_matches_tanh(lq_setup):
    nlp, _, lq, pert = lq_setup
    delta = solve_sensitivity(lq, pert)
    deriv = forward_qoi_derivative(lq, delta, pert, nlp.problem.qoi)
    assert abs(deriv - toys.TANH1) < 1e-8


def test_sensitivity_is_linear_in_the_perturbation(lq_setup):
    _, _, lq, pert = lq_setup
    base = solve_sensitivity(lq, pert)
    for factor in (-1.0, 0.5, 2.0):
        scaled = solve_sensitivity(lq, pert.scaled(factor))
        assert np.max(np.abs(scaled.dx - factor * base.dx)) < 1e-12
        assert np.max(np.abs(scaled.du - factor * base.du)) < 1e-12
        assert np.max(np.abs(scaled.dlam - factor * base.dlam)) < 1e-12


def test_zero_perturbation_gives_zero_response(lq_setup):
    _, _, lq, pert = lq_setup
    zero = solve_sensitivity(lq, pert.scaled(0.0))
    assert np.all(zero.dx == 0.0)
    assert np.all(zero.du == 0.0)
    assert np.all(zero.dlam == 0.0)


def test_prediction_matches_resolve_for_linear_quadratic(lq_setup):
    nlp, sol, lq, pert = lq_setup
    delta = solve_sensitivity(lq, pert)
    h = 0.125
    shifted, shifted_sol = toys.solved_lq(16, 4, model=toys.constant_component(h))
    moved = shifted.unpack(shifted_sol.primal, shifted_sol.multipliers)
    predicted = lq.base.states + h * delta.dx
    assert np.max(np.abs(moved.states - predicted)) < 1e-9
    predicted_u = lq.base.controls + h * delta.du
    assert np.max(np.abs(moved.controls - predicted_u)) < 1e-9


def test_sample_perturbation_collects_values_and_partials():
    nlp, sol = toys.solved_lq(4, 3)
    lq = assemble_lq_data(nlp, sol)
    direction = CallableComponent(
        n_g=1,
        eval_fn=lambda t, y: np.array([t * y[0]]),
        jac_fn=lambda t, y: np.array([[t, 0.0]]),
        hess_fn=lambda t, y: np.zeros((1, 2, 2)),
    )
    pert = sample_perturbation(lq.base, direction)
    times = lq.grid.node_times
    assert pert.times.shape == times.shape
    for i, t in enumerate(times):
        x_i = lq.base.states[i + 1, 0]
        assert abs(pert.dg[i, 0] - t * x_i) < 1e-14
        assert abs(pert.dg_x[i, 0, 0] - t) < 1e-14
        assert pert.dg_u[i, 0, 0] == 0.0
    assert pert.dg_p.shape == (times.size, 1, 0)


def test_active_bound_is_refused():
    problem = toys.lq_problem(bounds=Bounds(u_lower=np.array([-0.5])))
    nlp = transcribe(problem, uniform_grid(8, 3))
    sol = solve(nlp, nlp.constant_guess())
    assert sol.status == "optimal"
    with pytest.raises(ValueError, match="active lower bound.*interior"):
        assemble_lq_data(nlp, sol)


def test_terminal_pin_is_refused():
    nlp = transcribe(toys.double_integrator_problem(), uniform_grid(4, 3))
    sol = solve(nlp, nlp.constant_guess())
    assert sol.status == "optimal"
    with pytest.raises(ValueError, match="terminal state"):
        assemble_lq_data(nlp, sol)


def test_non_stationary_point_is_refused():
    nlp, sol = toys.solved_lq(4, 3)
    drifted = dataclasses.replace(sol, primal=sol.primal + 0.05)
    with pytest.raises(ValueError, match="optimality system"):
        assemble_lq_data(nlp, drifted)


def test_grid_mismatch_is_rejected(lq_setup):
    _, _, lq, _ = lq_setup
    other_nlp, other_sol = toys.solved_lq(8, 3)
    other_lq = assemble_lq_data(other_nlp, other_sol)
    pert = sample_perturbation(other_lq.base, toys.constant_component(1.0))
    with pytest.raises(ValueError, match="grid"):
        solve_sensitivity(lq, pert)


def test_perturbation_shape_validation(lq_setup):
    _, _, lq, pert = lq_setup
    with pytest.raises(ValueError):
        PerturbationData(
            times=pert.times,
            dg=pert.dg[:-1],
            dg_x=pert.dg_x,
            dg_u=pert.dg_u,
            dg_p=pert.dg_p,
        )


def test_condensed_hessian_blocks_are_symmetric(lq_setup):
    _, _, lq, _ = lq_setup
    for block in lq.hess_yy:
        assert np.max(np.abs(block - block.T)) < 1e-12


def test_feedback_model_curvature_enters_state_block():
    nlp = transcribe(toys.chain_rule_problem(), uniform_grid(8, 3))
    sol = solve(nlp, nlp.constant_guess())
    assert sol.status == "optimal"
    lq = assemble_lq_data(nlp, sol)
    costates = lq.base.costates[:, 0]
    assert np.max(np.abs(costates)) > 0.1
    for i in range(lq.grid.node_times.size):
        expected = np.array([[2.0 * costates[i], 0.0], [0.0, 2.0]])
        assert np.max(np.abs(lq.hess_yy[i] - expected)) < 1e-9

"""Quadrature, differentiation, and interpolation on Radau grids."""

import numpy as np
import pytest

from ocsens.collocation import (
    barycentric_weights,
    differentiation_matrix,
    interpolate_nodal,
    interpolate_state,
    interpolate_values,
    lgr_nodes,
    make_grid,
    uniform_grid,
)


@pytest.mark.parametrize("n", range(2, 9))
def test_quadrature_exact_through_degree_2n_minus_2(n):
    nodes, weights = lgr_nodes(n)
    for deg in range(2 * n - 1):
        exact = (1.0 + (-1.0) ** deg) / (deg + 1.0)
        assert abs(weights @ nodes**deg - exact) < 1e-12


@pytest.mark.parametrize("n", range(2, 9))
def test_nodes_interior_up_to_right_endpoint(n):
    nodes, weights = lgr_nodes(n)
    assert nodes.shape == (n,)
    assert weights.shape == (n,)
    assert np.all(np.diff(nodes) > 0)
    assert nodes[0] > -1.0
    assert nodes[-1] == 1.0
    assert np.all(weights > 0)
    assert abs(weights.sum() - 2.0) < 1e-12


@pytest.mark.parametrize("n", range(2, 9))
def test_differentiation_exact_for_polynomials(n):
    nodes, _ = lgr_nodes(n)
    points = np.concatenate(([-1.0], nodes))
    diff = differentiation_matrix(points)
    assert diff.shape == (n + 1, n + 1)
    for deg in range(n + 1):
        values = points**deg
        exact = deg * points ** max(deg - 1, 0) if deg else np.zeros_like(points)
        assert np.max(np.abs(diff @ values - exact)) < 1e-11


def test_differentiation_annihilates_constants():
    points = np.linspace(-1.0, 1.0, 6)
    diff = differentiation_matrix(points)
    assert np.max(np.abs(diff @ np.ones(6))) < 1e-13


def test_barycentric_weights_three_point_pattern():
    weights = barycentric_weights(np.array([-1.0, 0.0, 1.0]))
    ratio = weights / weights[0]
    assert np.allclose(ratio, [1.0, -2.0, 1.0], atol=1e-14)


def test_interpolate_values_reproduces_quadratic():
    points = np.array([0.0, 0.5, 1.0])
    values = (points**2)[:, None]
    approx = interpolate_values(points, values, 0.25)
    assert abs(approx[0] - 0.0625) < 1e-15


def test_uniform_grid_structure():
    grid = uniform_grid(3, 4, t0=0.0, tf=1.5)
    assert grid.num_intervals == 3
    assert grid.nodes_per_interval == 4
    assert np.allclose(grid.breakpoints, [0.0, 0.5, 1.0, 1.5])
    assert grid.support_times.shape == (1 + 3 * 4,)
    assert grid.node_times.shape == (12,)
    assert grid.support_times[0] == 0.0
    assert grid.support_times[-1] == 1.5
    assert np.all(np.diff(grid.support_times) > 0)
    # support removes each interval start from the node list
    mask = np.isin(grid.support_times, grid.node_times)
    assert mask.sum() == grid.node_times.size


def test_grid_weights_integrate_cubic_exactly():
    grid = uniform_grid(4, 3)
    approx = grid.node_weights @ grid.node_times**3
    assert abs(approx - 0.25) < 1e-14
    assert abs(grid.node_weights.sum() - 1.0) < 1e-13


def test_make_grid_nonuniform_weights_sum_per_interval():
    grid = make_grid(np.array([0.0, 0.25, 1.0]), 3)
    first = grid.node_weights[:3].sum()
    second = grid.node_weights[3:].sum()
    assert abs(first - 0.25) < 1e-14
    assert abs(second - 0.75) < 1e-14


def test_state_interpolation_accuracy_on_smooth_function():
    grid = uniform_grid(4, 5)
    values = np.exp(grid.support_times)[:, None]
    for t in (0.3, 0.65, 0.9):
        err = abs(interpolate_state(grid, values, t)[0] - np.exp(t))
        assert err < 1e-9


def test_state_interpolation_exact_at_support_points():
    grid = uniform_grid(2, 3)
    values = np.sin(grid.support_times)[:, None]
    for i in (0, 2, 4, grid.support_times.size - 1):
        t = grid.support_times[i]
        assert interpolate_state(grid, values, t)[0] == values[i, 0]


def test_nodal_interpolation_accuracy():
    grid = uniform_grid(4, 5)
    values = np.exp(grid.node_times)[:, None]
    err = abs(interpolate_nodal(grid, values, 0.3)[0] - np.exp(0.3))
    assert err < 1e-7


def test_reference_nodes_match_grid_cache():
    grid = uniform_grid(2, 4)
    nodes, weights = lgr_nodes(4)
    assert np.array_equal(grid.ref_nodes, nodes)
    assert np.array_equal(grid.ref_weights, weights)
    assert len(grid.diff_matrices) == 2

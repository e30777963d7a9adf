"""Finite difference screening of user-supplied Jacobians."""

import numpy as np

from ocsens.derivative_check import central_difference_jacobian, check_derivatives


def _smooth(point):
    value = np.array([np.sin(point[0]) * point[1], point[0] ** 2 + np.exp(point[1])])
    jac = np.array(
        [
            [np.cos(point[0]) * point[1], np.sin(point[0])],
            [2.0 * point[0], np.exp(point[1])],
        ]
    )
    return value, jac


def test_central_difference_matches_analytic_jacobian():
    point = np.array([0.4, -0.2])
    numeric = central_difference_jacobian(lambda w: _smooth(w)[0], point)
    assert np.max(np.abs(numeric - _smooth(point)[1])) < 1e-9


def test_exact_jacobian_passes():
    report = check_derivatives(_smooth, np.array([0.4, -0.2]))
    assert report.ok
    assert report.flagged == []
    assert report.jacobian_deviation < 1e-9


def test_corrupted_entry_is_flagged_with_location():
    def corrupted(point):
        value, jac = _smooth(point)
        jac = jac.copy()
        jac[1, 0] += 5e-3
        return value, jac

    report = check_derivatives(corrupted, np.array([0.4, -0.2]))
    assert not report.ok
    rows_cols = [(row, col) for row, col, _ in report.flagged]
    assert (1, 0) in rows_cols
    worst = max(report.flagged, key=lambda item: item[2])
    assert worst[0] == 1 and worst[1] == 0
    assert abs(worst[2] - 5e-3) < 1e-6


def test_remainder_ratio_is_four_for_quadratic_maps():
    def quadratic(point):
        value = np.array([point @ point])
        return value, 2.0 * point[None, :]

    report = check_derivatives(quadratic, np.array([0.3, 0.7, -0.2]))
    assert report.ok
    assert report.ratios_ok()
    for direction in report.directions:
        assert len(direction.remainders) >= 2


def test_linear_maps_hit_the_remainder_floor():
    matrix = np.array([[1.0, 2.0], [3.0, 4.0]])

    def linear(point):
        return matrix @ point, matrix

    report = check_derivatives(linear, np.array([0.5, -1.0]))
    assert report.ok
    assert report.ratios_ok()

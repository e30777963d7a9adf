"""Radau collocation grids with the right interval endpoint included.

Nodes, quadrature weights, barycentric differentiation matrices, and
polynomial interpolation on multi-interval meshes. State polynomials are
supported on the interval start plus the collocation nodes; controls live
on the nodes only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import special


def lgr_nodes(n: int) -> tuple[NDArray, NDArray]:
    """Radau nodes and quadrature weights on [-1, 1] including +1.

    The node set is the classical Legendre-Gauss-Radau family reflected so
    the fixed endpoint sits at +1. Quadrature with these weights integrates
    polynomials of degree <= 2n - 2 exactly.

    Args:
        n: Number of nodes, n >= 1.

    Returns:
        Tuple (nodes, weights), both shape (n,), nodes strictly increasing
        with nodes[-1] == 1.0 exactly.
    """
    if n < 1:
        raise ValueError(f"need at least one node, got n={n}")
    if n == 1:
        return np.array([1.0]), np.array([2.0])
    # Interior nodes of the left-Radau family are roots of the Jacobi
    # polynomial P_{n-1}^(0,1); reflect to place the endpoint at +1.
    interior, _ = special.roots_jacobi(n - 1, 0.0, 1.0)
    nodes = np.concatenate((np.sort(-interior), [1.0]))
    legendre = special.eval_legendre(n - 1, nodes)
    weights = (1.0 + nodes) / (n * n * legendre**2)
    return nodes, weights


def barycentric_weights(points: NDArray) -> NDArray:
    """Barycentric weights for Lagrange interpolation on distinct points."""
    points = np.asarray(points, dtype=float)
    diff = points[:, None] - points[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def differentiation_matrix(points: NDArray) -> NDArray:
    """Square differentiation matrix on the given support points.

    Built from barycentric weights with the negative-sum trick for the
    diagonal, so every row sums to zero exactly in exact arithmetic. Row i
    maps support values to the interpolant's derivative at points[i].
    """
    points = np.asarray(points, dtype=float)
    m = points.size
    if m < 2:
        return np.zeros((m, m))
    w = barycentric_weights(points)
    diff = points[:, None] - points[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


def interpolate_values(points: NDArray, values: NDArray, t: float) -> NDArray:
    """Evaluate the Lagrange interpolant of `values` over `points` at t.

    Uses the second barycentric formula; an exact hit on a support point
    returns the stored row bit-identically.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    hit = np.nonzero(points == t)[0]
    if hit.size:
        return values[hit[0]].copy()
    w = barycentric_weights(points)
    coef = w / (t - points)
    return coef @ values / coef.sum()


@dataclass(frozen=True)
class CollocationGrid:
    """Multi-interval Radau mesh on a fixed horizon.

    States are indexed on the support grid (interval start followed by the
    nodes of every interval, endpoints shared between neighbours), controls
    and collocation conditions on the node grid.

    Attributes:
        breakpoints: Interval boundaries, shape (num_intervals + 1,).
        nodes_per_interval: Collocation nodes per interval.
        ref_nodes: Radau nodes on [-1, 1], right endpoint included.
        ref_weights: Matching quadrature weights on [-1, 1].
        support_times: Times of the state support grid, shape (1 + K*n,).
        node_times: Collocation times, shape (K*n,).
        node_weights: Physical quadrature weights at the nodes, shape (K*n,).
        diff_matrices: Per-interval derivative operators, shape (K, n, n+1),
            acting on values at the interval's n+1 support points.
    """

    breakpoints: NDArray
    nodes_per_interval: int
    ref_nodes: NDArray = field(repr=False)
    ref_weights: NDArray = field(repr=False)
    support_times: NDArray = field(repr=False)
    node_times: NDArray = field(repr=False)
    node_weights: NDArray = field(repr=False)
    diff_matrices: NDArray = field(repr=False)

    @property
    def num_intervals(self) -> int:
        return self.breakpoints.size - 1

    @property
    def num_nodes(self) -> int:
        return self.num_intervals * self.nodes_per_interval

    @property
    def num_support(self) -> int:
        return 1 + self.num_nodes

    @property
    def t0(self) -> float:
        return float(self.breakpoints[0])

    @property
    def tf(self) -> float:
        return float(self.breakpoints[-1])

    def support_slice(self, interval: int) -> slice:
        """Support-grid indices of the given interval's n+1 points."""
        n = self.nodes_per_interval
        return slice(interval * n, interval * n + n + 1)

    def node_slice(self, interval: int) -> slice:
        """Node-grid indices of the given interval's n collocation points."""
        n = self.nodes_per_interval
        return slice(interval * n, (interval + 1) * n)

    def interval_of(self, t: float) -> int:
        """Index of the interval containing t (ties go to the left)."""
        k = int(np.searchsorted(self.breakpoints, t, side="left")) - 1
        return min(max(k, 0), self.num_intervals - 1)


def make_grid(breakpoints: NDArray, nodes_per_interval: int) -> CollocationGrid:
    """Build a collocation grid from explicit interval boundaries."""
    breakpoints = np.asarray(breakpoints, dtype=float)
    if breakpoints.ndim != 1 or breakpoints.size < 2:
        raise ValueError("breakpoints must be a 1-d array with >= 2 entries")
    if not np.all(np.diff(breakpoints) > 0):
        raise ValueError("breakpoints must be strictly increasing")
    n = nodes_per_interval
    ref_nodes, ref_weights = lgr_nodes(n)
    num_intervals = breakpoints.size - 1

    support_times = np.empty(1 + num_intervals * n)
    support_times[0] = breakpoints[0]
    node_weights = np.empty(num_intervals * n)
    diff_matrices = np.empty((num_intervals, n, n + 1))
    for k in range(num_intervals):
        a, b = breakpoints[k], breakpoints[k + 1]
        half = 0.5 * (b - a)
        times = a + half * (ref_nodes + 1.0)
        times[-1] = b  # keep shared endpoints exact
        support_times[1 + k * n : 1 + (k + 1) * n] = times
        node_weights[k * n : (k + 1) * n] = half * ref_weights
        interval_support = np.concatenate(([a], times))
        diff_matrices[k] = differentiation_matrix(interval_support)[1:, :]
    node_times = support_times[1:]
    return CollocationGrid(
        breakpoints=breakpoints,
        nodes_per_interval=n,
        ref_nodes=ref_nodes,
        ref_weights=ref_weights,
        support_times=support_times,
        node_times=node_times,
        node_weights=node_weights,
        diff_matrices=diff_matrices,
    )


def uniform_grid(
    num_intervals: int, nodes_per_interval: int, t0: float = 0.0, tf: float = 1.0
) -> CollocationGrid:
    """Uniform mesh with `num_intervals` equal intervals on [t0, tf]."""
    return make_grid(np.linspace(t0, tf, num_intervals + 1), nodes_per_interval)


def interpolate_state(grid: CollocationGrid, states: NDArray, t: float) -> NDArray:
    """Interpolate support-grid state samples at time t.

    Within the containing interval the interpolant has degree n using the
    interval start plus its n nodes; support points reproduce the stored
    values bit-identically.
    """
    k = grid.interval_of(t)
    sl = grid.support_slice(k)
    return interpolate_values(grid.support_times[sl], states[sl], t)


def interpolate_nodal(grid: CollocationGrid, values: NDArray, t: float) -> NDArray:
    """Interpolate node-grid samples (controls, costates) at time t.

    Uses the degree n-1 polynomial through the containing interval's nodes.
    """
    k = grid.interval_of(t)
    sl = grid.node_slice(k)
    return interpolate_values(grid.node_times[sl], values[sl], t)

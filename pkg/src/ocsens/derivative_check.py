"""Finite-difference validation of claimed analytic derivatives.

Two complementary checks: Taylor remainders along directions, whose decay
ratio approaches 4 when steps halve and the claimed Jacobian is exact, and
an entrywise central-difference comparison that localizes wrong entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

ValueAndJacobian = Callable[[NDArray], tuple[NDArray, NDArray]]


@dataclass
class DirectionResult:
    """Taylor-remainder record for one probe direction."""

    direction: NDArray
    steps: NDArray
    remainders: NDArray
    ratios: NDArray
    nonfinite_steps: list[float]
    value_scale: float = 1.0


@dataclass
class DerivativeReport:
    """Outcome of check_derivatives.

    Attributes:
        directions: Per-direction Taylor results; exact first derivatives
            give ratios near 4 once steps are small enough.
        jacobian_deviation: Max abs difference between the claimed Jacobian
            and a central-difference estimate.
        flagged: Entries (row, col, deviation) exceeding the flag threshold.
    """

    directions: list[DirectionResult]
    jacobian_deviation: float
    flagged: list[tuple[int, int, float]]

    def ratios_ok(self, target: float = 4.0, rel_tol: float = 0.25, floor: float = 1e-12) -> bool:
        """True when every direction's remainders decay like the target.

        Remainders below floor * value_scale sit in roundoff (linear maps
        produce exact zeros) and are treated as a pass, not as evidence.
        """
        for rec in self.directions:
            finite = np.isfinite(rec.remainders)
            if not finite.any():
                return False
            cutoff = floor * rec.value_scale
            if np.all(rec.remainders[finite] <= cutoff):
                continue
            usable = 0
            for big, small, ratio in zip(rec.remainders[:-1], rec.remainders[1:], rec.ratios):
                if not np.isfinite(ratio) or min(big, small) <= cutoff:
                    continue
                if abs(ratio - target) > rel_tol * target:
                    return False
                usable += 1
            if usable == 0:
                return False
        return True

    @property
    def ok(self) -> bool:
        return not self.flagged and self.ratios_ok()


def central_difference_jacobian(
    value_fn: Callable[[NDArray], NDArray], point: NDArray, step: float = 1e-5
) -> NDArray:
    """Central-difference Jacobian of value_fn at point, column by column."""
    point = np.asarray(point, dtype=float)
    base = np.atleast_1d(np.asarray(value_fn(point), dtype=float))
    jac = np.empty((base.size, point.size))
    for j in range(point.size):
        forward = point.copy()
        backward = point.copy()
        forward[j] += step
        backward[j] -= step
        fp = np.atleast_1d(np.asarray(value_fn(forward), dtype=float))
        fm = np.atleast_1d(np.asarray(value_fn(backward), dtype=float))
        jac[:, j] = (fp - fm) / (2.0 * step)
    return jac


def check_derivatives(
    fn: ValueAndJacobian,
    point: NDArray,
    directions: Optional[Sequence[NDArray]] = None,
    steps: Sequence[float] = (1e-3, 5e-4, 2.5e-4),
    fd_step: float = 1e-5,
    flag_tol: float = 1e-5,
) -> DerivativeReport:
    """Validate a claimed Jacobian against finite differences.

    Args:
        fn: Callable returning (value, jacobian) at a point. Scalars are
            treated as length-1 vectors with a (1, n) Jacobian.
        point: Expansion point.
        directions: Probe directions for the Taylor test; defaults to the
            coordinate directions.
        steps: Decreasing step sizes; consecutive remainder ratios are
            reported (4 means the claimed derivative is exact to O(h^2)).
        fd_step: Step for the entrywise central-difference cross-check.
        flag_tol: Relative threshold (scaled by the Jacobian magnitude)
            above which an entry deviation is flagged.

    Returns:
        DerivativeReport; non-finite evaluations are recorded per step and
        direction rather than raised.
    """
    point = np.asarray(point, dtype=float)
    value, jac = fn(point)
    value = np.atleast_1d(np.asarray(value, dtype=float))
    jac = np.atleast_2d(np.asarray(jac, dtype=float))

    if directions is None:
        directions = [np.eye(point.size)[j] for j in range(point.size)]

    results = []
    for direction in directions:
        direction = np.asarray(direction, dtype=float)
        predicted = jac @ direction
        remainders = np.full(len(steps), np.nan)
        nonfinite = []
        for i, h in enumerate(steps):
            shifted, _ = fn(point + h * direction)
            shifted = np.atleast_1d(np.asarray(shifted, dtype=float))
            if not np.all(np.isfinite(shifted)):
                nonfinite.append(float(h))
                continue
            remainders[i] = np.abs(shifted - value - h * predicted).max()
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = remainders[:-1] / remainders[1:]
        results.append(
            DirectionResult(
                direction=direction,
                steps=np.asarray(steps, dtype=float),
                remainders=remainders,
                ratios=ratios,
                nonfinite_steps=nonfinite,
                value_scale=max(1.0, float(np.abs(value).max())),
            )
        )

    fd = central_difference_jacobian(lambda x: fn(x)[0], point, step=fd_step)
    deviation = np.abs(jac - fd)
    scale = max(1.0, float(np.abs(jac).max()))
    flagged = [
        (int(i), int(j), float(deviation[i, j]))
        for i, j in zip(*np.nonzero(deviation > flag_tol * scale))
    ]
    return DerivativeReport(
        directions=results,
        jacobian_deviation=float(deviation.max()),
        flagged=flagged,
    )

"""Primal-dual interior point solver for sparse equality + box NLPs.

The barrier subproblem eliminates bound multipliers into a condensed
symmetric KKT system solved by sparse LU with iterative refinement. A
dense LDL^T factorization counts the KKT inertia; the primal
regularization grows geometrically until the matrix has exactly as many
negative eigenvalues as constraints, which makes the Newton direction a
descent direction for the filter line search. Problems without finite bounds
collapse to a pure Newton method on the equality KKT conditions with the
same line search.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

_KAPPA_SIGMA = 1e10

# Filter line search constants: sufficient-decrease margins for the
# (constraint violation, barrier objective) pair and the switching
# exponents selecting objective-driven steps.
_GAMMA_THETA = 1e-5
_GAMMA_PHI = 1e-5
_S_THETA = 1.1
_S_PHI = 2.3
_DELTA_SW = 1.0


class LinearSolveError(RuntimeError):
    """Raised when a KKT system cannot be solved to the requested accuracy."""


class KktFactorization:
    """LU factorization of a sparse KKT matrix with iterative refinement."""

    def __init__(self, matrix: sp.spmatrix):
        self.matrix = matrix.tocsc()
        self._row_norm = float(np.abs(self.matrix).sum(axis=1).max()) if self.matrix.nnz else 0.0
        try:
            self.lu = spla.splu(self.matrix)
        except RuntimeError as err:
            raise LinearSolveError(f"KKT factorization failed: {err}") from err

    def solve(self, rhs: NDArray, refine: int = 2, rtol: float = 1e-10) -> NDArray:
        """Solve K x = rhs for one or several right-hand sides.

        Refines the LU solution and raises if the final residual exceeds
        rtol relative to the data, which flags near-singular systems that
        SuperLU factors without complaint.
        """
        rhs = np.asarray(rhs, dtype=float)
        x = self.lu.solve(rhs)
        for _ in range(refine):
            residual = rhs - self.matrix @ x
            if not np.all(np.isfinite(residual)):
                raise LinearSolveError("KKT solve produced non-finite values")
            x = x + self.lu.solve(residual)
        residual = rhs - self.matrix @ x
        scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)), self._row_norm * float(np.max(np.abs(x), initial=0.0)))
        worst = float(np.max(np.abs(residual), initial=0.0))
        if not math.isfinite(worst) or worst > rtol * scale:
            raise LinearSolveError(
                f"KKT solve residual {worst:.3e} exceeds {rtol:.1e} * {scale:.3e}; "
                "the system is singular or severely ill-conditioned"
            )
        return x


def assemble_kkt(primal_block: sp.spmatrix, jacobian: sp.spmatrix) -> sp.csc_matrix:
    """Symmetric saddle matrix [[M, J^T], [J, 0]] in CSC form."""
    return sp.bmat([[primal_block, jacobian.T], [jacobian, None]], format="csc")


def solve_kkt_linear(system: sp.spmatrix, rhs: NDArray, rtol: float = 1e-10) -> NDArray:
    """Solve a sparse symmetric indefinite system to a relative residual.

    Structurally singular systems (an all-zero row or column) are rejected
    with the deficient index before factorization; numerically singular
    ones surface as LinearSolveError from the residual check.
    """
    mat = system.tocsc()
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"system is {mat.shape}, expected square")
    present = np.zeros(mat.shape[0], dtype=bool)
    if mat.nnz:
        coo = mat.tocoo()
        keep = coo.data != 0.0
        present[coo.row[keep]] = True
        present[coo.col[keep]] = True
    if not present.all():
        index = int(np.argmin(present))
        raise LinearSolveError(f"structurally singular system: row/column {index} is empty")
    return KktFactorization(mat).solve(np.asarray(rhs, dtype=float), rtol=rtol)


# Dense LDL^T inertia counting stays affordable up to this KKT dimension.
_INERTIA_SIZE_LIMIT = 3000


def kkt_inertia(matrix: sp.spmatrix) -> tuple[int, int, int]:
    """Counts of (positive, negative, zero) eigenvalues of a symmetric matrix.

    Uses the Bunch-Kaufman LDL^T factorization, reading the signs off the
    1x1 and 2x2 blocks of D. A 2x2 pivot block always carries one positive
    and one negative eigenvalue.
    """
    dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    _, d, _ = sla.ldl(dense)
    n = d.shape[0]
    scale = float(np.max(np.abs(d), initial=0.0))
    # Only pivots that vanish at working precision count as zero; small
    # pivots are legitimate in badly scaled problems and keep their sign.
    tiny = 1e-300 * max(scale, 1.0)
    pos = neg = zero = 0
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            pos += 1
            neg += 1
            i += 2
            continue
        val = d[i, i]
        if val > tiny:
            pos += 1
        elif val < -tiny:
            neg += 1
        else:
            zero += 1
        i += 1
    return pos, neg, zero


@dataclass
class SolverConfig:
    """Tunable knobs for the interior point iteration."""

    kkt_tolerance: float = 1e-8
    max_iterations: int = 200
    barrier_initial: float = 1e-1
    barrier_min_factor: float = 0.1
    bound_push: float = 1e-2
    backtrack_factor: float = 0.5
    armijo_constant: float = 1e-8
    step_min: float = 1e-13
    reg_initial: float = 1e-8
    reg_max: float = 1e30
    restoration_steps: int = 40
    multiplier_init: bool = True
    variable_scaling: Optional[NDArray] = None
    auto_scale: bool = True
    comp_tolerance: Optional[float] = None
    verbose: bool = False

    @property
    def barrier_min(self) -> float:
        return self.barrier_min_factor * self.kkt_tolerance


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    barrier: float
    objective: float
    dual_infeasibility: float
    primal_infeasibility: float
    complementarity: float
    step_length: float
    regularization: float


@dataclass
class NlpSolution:
    """Primal-dual point returned by the solver with convergence evidence."""

    primal: NDArray
    multipliers: NDArray
    z_lower: NDArray
    z_upper: NDArray
    objective: float
    kkt_residual: float
    complementarity: float
    iterations: int
    status: str
    log: list[IterationRecord] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == "optimal"


class ScaledNlp:
    """View of an NLP in scaled variables, constraints, and objective.

    Variables transform as w = scale * w_hat, constraint rows are divided
    by row_scale, and the objective is multiplied by obj_scale. Equality
    multipliers of the scaled problem relate to the originals through
    nu = nu_hat / (obj_scale * row_scale) and bound multipliers through
    z = z_hat / (obj_scale * scale).
    """

    def __init__(
        self,
        nlp,
        scale: NDArray,
        row_scale: Optional[NDArray] = None,
        obj_scale: float = 1.0,
    ):
        scale = np.asarray(scale, dtype=float)
        if scale.shape != (nlp.layout.num_vars,):
            raise ValueError(f"scaling has shape {scale.shape}, expected ({nlp.layout.num_vars},)")
        if not np.all(scale > 0):
            raise ValueError("variable scaling entries must be positive")
        if row_scale is not None:
            row_scale = np.asarray(row_scale, dtype=float)
            if row_scale.shape != (nlp.layout.num_cons,):
                raise ValueError(
                    f"row scaling has shape {row_scale.shape}, expected ({nlp.layout.num_cons},)"
                )
            if not np.all(row_scale > 0):
                raise ValueError("row scaling entries must be positive")
        if not obj_scale > 0:
            raise ValueError("objective scaling must be positive")
        self.inner = nlp
        self.scale = scale
        self.row_scale = row_scale
        self.obj_scale = obj_scale
        self.layout = nlp.layout
        self.lower = nlp.lower / scale
        self.upper = nlp.upper / scale

    def objective(self, w: NDArray) -> float:
        return self.obj_scale * self.inner.objective(self.scale * w)

    def gradient(self, w: NDArray) -> NDArray:
        return self.obj_scale * self.scale * self.inner.gradient(self.scale * w)

    def constraints(self, w: NDArray) -> NDArray:
        cons = self.inner.constraints(self.scale * w)
        return cons if self.row_scale is None else cons / self.row_scale

    def jacobian(self, w: NDArray) -> sp.csr_matrix:
        jac = self.inner.jacobian(self.scale * w).multiply(self.scale[None, :])
        if self.row_scale is not None:
            jac = jac.multiply(1.0 / self.row_scale[:, None])
        return jac.tocsr()

    def lagrangian_hessian(self, w: NDArray, nu: NDArray) -> sp.csc_matrix:
        nu_inner = nu / self.obj_scale
        if self.row_scale is not None:
            nu_inner = nu_inner / self.row_scale
        hess = self.inner.lagrangian_hessian(self.scale * w, nu_inner)
        scaled = hess.multiply(self.scale[None, :]).multiply(self.scale[:, None])
        return (self.obj_scale * scaled).tocsc()


def _restore_feasibility(nlp, w: NDArray, box: "_BarrierState", target: float, max_steps: int) -> NDArray:
    """Gauss-Newton phase driving the equality constraints toward zero.

    Takes minimum-norm Newton steps for c(w) = 0, clipped to stay strictly
    inside the box. Collocation systems are consistent, so this phase
    usually converges quadratically and hands the interior point loop a
    nearly feasible start, which is worth far more than a warm objective.
    """
    nv = nlp.layout.num_vars
    identity = sp.identity(nv, format="csc")
    for _ in range(max_steps):
        cons = nlp.constraints(w)
        if not np.all(np.isfinite(cons)):
            break
        if float(np.max(np.abs(cons), initial=0.0)) <= target:
            break
        jac = nlp.jacobian(w)
        try:
            factor = KktFactorization(assemble_kkt(identity, jac))
            step = factor.solve(np.concatenate((np.zeros(nv), -cons)), rtol=1e-6)
        except LinearSolveError:
            break
        dw = step[:nv]
        alpha = _fraction_to_boundary(w, dw, box.lower, box.upper, 0.995) if box.bounded else 1.0
        theta = float(np.sum(np.abs(cons)))
        accepted = False
        while alpha >= 1e-8:
            w_try = w + alpha * dw
            cons_try = nlp.constraints(w_try)
            if np.all(np.isfinite(cons_try)) and float(np.sum(np.abs(cons_try))) <= (1.0 - 1e-4 * alpha) * theta:
                w = w_try
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
    return w


def _push_interior(w: NDArray, lower: NDArray, upper: NDArray, push: float) -> NDArray:
    """Move a start point strictly inside its box without large detours."""
    w = w.copy()
    has_l = np.isfinite(lower)
    has_u = np.isfinite(upper)
    lo = np.where(has_l, lower, 0.0)
    hi = np.where(has_u, upper, 0.0)
    width = np.where(has_l & has_u, hi - lo, np.inf)
    pad_l = np.minimum(push * np.maximum(1.0, np.abs(lo)), 0.5 * push * width)
    pad_u = np.minimum(push * np.maximum(1.0, np.abs(hi)), 0.5 * push * width)
    w = np.where(has_l, np.maximum(w, lo + pad_l), w)
    w = np.where(has_u, np.minimum(w, hi - pad_u), w)
    return w


def _fraction_to_boundary(values: NDArray, steps: NDArray, floor: NDArray, ceil: NDArray, tau: float) -> float:
    """Largest alpha in (0, 1] keeping values + alpha*steps inside the box."""
    alpha = 1.0
    down = steps < 0
    if np.any(down):
        gaps = values[down] - floor[down]
        finite = np.isfinite(gaps)
        if np.any(finite):
            alpha = min(alpha, float(np.min(-tau * gaps[finite] / steps[down][finite])))
    up = steps > 0
    if np.any(up):
        gaps = ceil[up] - values[up]
        finite = np.isfinite(gaps)
        if np.any(finite):
            alpha = min(alpha, float(np.min(tau * gaps[finite] / steps[up][finite])))
    return alpha


class _BarrierState:
    """Bound bookkeeping shared by the residual, filter, and step formulas."""

    def __init__(self, lower: NDArray, upper: NDArray):
        self.lower = lower
        self.upper = upper
        self.has_lower = np.isfinite(lower)
        self.has_upper = np.isfinite(upper)
        self.bounded = bool(self.has_lower.any() or self.has_upper.any())

    def slack_lower(self, w: NDArray) -> NDArray:
        return np.where(self.has_lower, w - self.lower, 1.0)

    def slack_upper(self, w: NDArray) -> NDArray:
        return np.where(self.has_upper, self.upper - w, 1.0)

    def barrier_value(self, w: NDArray, mu: float) -> float:
        if not self.bounded or mu == 0.0:
            return 0.0
        s_l = self.slack_lower(w)[self.has_lower]
        s_u = self.slack_upper(w)[self.has_upper]
        if np.any(s_l <= 0) or np.any(s_u <= 0):
            return np.inf
        return -mu * (float(np.sum(np.log(s_l))) + float(np.sum(np.log(s_u))))

    def barrier_gradient(self, w: NDArray, mu: float) -> NDArray:
        grad = np.zeros_like(w)
        if self.bounded and mu != 0.0:
            grad -= np.where(self.has_lower, mu / self.slack_lower(w), 0.0)
            grad += np.where(self.has_upper, mu / self.slack_upper(w), 0.0)
        return grad


def solve(nlp, w0: NDArray, config: Optional[SolverConfig] = None) -> NlpSolution:
    """Minimize a transcribed NLP from the given start point.

    Returns the best point found together with the primal-dual residuals;
    check NlpSolution.success before trusting the result.
    """
    # Line-search trial points may overflow the problem functions; such
    # steps are rejected on their non-finite values, so the hardware
    # warnings carry no information.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _solve_impl(nlp, w0, config)


def _solve_impl(nlp, w0: NDArray, config: Optional[SolverConfig] = None) -> NlpSolution:
    config = config or SolverConfig()
    scale = config.variable_scaling
    if scale is not None:
        base = ScaledNlp(nlp, scale)
        w0s = np.asarray(w0, dtype=float) / base.scale
        row_scale = None
        obj_scale = 1.0
        if config.auto_scale:
            # Balance gradient and constraint rows at the start point so
            # the KKT systems see entries of comparable magnitude.
            point = _push_interior(w0s, base.lower, base.upper, config.bound_push)
            grad0 = base.gradient(point)
            obj_scale = min(1.0, 100.0 / max(1e-8, float(np.max(np.abs(grad0), initial=0.0))))
            jac0 = base.jacobian(point).tocsr()
            row_inf = np.zeros(nlp.layout.num_cons)
            if jac0.nnz:
                row_inf = np.asarray(np.abs(jac0).max(axis=1).todense()).ravel()
            row_scale = np.clip(row_inf / 100.0, 1.0, 1e6)
        scaled = ScaledNlp(nlp, scale, row_scale, obj_scale)
        # Complementarity grows by 1/obj_scale when mapped back to original
        # units, so the scaled solve must finish with a matching margin.
        comp_factor = max(min(obj_scale, 1.0), 1e-3)
        inner_cfg = SolverConfig(
            **{
                **config.__dict__,
                "variable_scaling": None,
                "auto_scale": False,
                "barrier_min_factor": config.barrier_min_factor * comp_factor,
                "comp_tolerance": 5.0 * config.kkt_tolerance * comp_factor,
            }
        )
        sol = solve(scaled, w0s, inner_cfg)
        sol.primal = sol.primal * scaled.scale
        sol.z_lower = sol.z_lower / (obj_scale * scaled.scale)
        sol.z_upper = sol.z_upper / (obj_scale * scaled.scale)
        sol.multipliers = sol.multipliers / obj_scale
        if row_scale is not None:
            sol.multipliers = sol.multipliers / row_scale
        # Report the solution quality in original units.
        grad = nlp.gradient(sol.primal)
        cons = nlp.constraints(sol.primal)
        dual = grad + nlp.jacobian(sol.primal).T @ sol.multipliers - sol.z_lower + sol.z_upper
        box_phys = _BarrierState(nlp.lower, nlp.upper)
        comp = 0.0
        if box_phys.bounded:
            comp = max(
                float(np.max(np.abs(box_phys.slack_lower(sol.primal) * sol.z_lower)[box_phys.has_lower], initial=0.0)),
                float(np.max(np.abs(box_phys.slack_upper(sol.primal) * sol.z_upper)[box_phys.has_upper], initial=0.0)),
            )
        sol.objective = float(nlp.objective(sol.primal))
        sol.kkt_residual = max(
            float(np.max(np.abs(dual), initial=0.0)),
            float(np.max(np.abs(cons), initial=0.0)),
        )
        sol.complementarity = comp
        return sol

    tol = config.kkt_tolerance
    box = _BarrierState(nlp.lower, nlp.upper)
    w = _push_interior(np.asarray(w0, dtype=float), nlp.lower, nlp.upper, config.bound_push)
    nc = nlp.layout.num_cons
    nv = nlp.layout.num_vars
    if config.restoration_steps > 0:
        w = _restore_feasibility(nlp, w, box, target=tol, max_steps=config.restoration_steps)
    mu = config.barrier_initial if box.bounded else 0.0
    z_l = np.where(box.has_lower, np.clip(mu / box.slack_lower(w), 1e-6, 1e6), 0.0)
    z_u = np.where(box.has_upper, np.clip(mu / box.slack_upper(w), 1e-6, 1e6), 0.0)
    nu = np.zeros(nc)
    if config.multiplier_init:
        # Least-squares equality multipliers at the start point keep the
        # first dual residuals commensurate with the gradient scale.
        try:
            grad0 = nlp.gradient(w)
            factor0 = KktFactorization(assemble_kkt(sp.identity(nv, format="csc"), nlp.jacobian(w)))
            guess = factor0.solve(np.concatenate((-(grad0 - z_l + z_u), np.zeros(nc))), rtol=1e-6)[nv:]
            if float(np.max(np.abs(guess), initial=0.0)) <= 1e3 * (1.0 + float(np.max(np.abs(grad0)))):
                nu = guess
        except LinearSolveError:
            pass
    delta_warm = 0.0
    filter_pairs: list[tuple[float, float]] = []
    theta_cap: Optional[float] = None
    theta_small = 1e-4
    log: list[IterationRecord] = []
    status = "max_iterations"
    stalls = 0

    def residuals(current_mu: float) -> tuple[float, float, float]:
        dual = grad + jac.T @ nu - z_l + z_u
        comp = 0.0
        if box.bounded:
            comp_l = box.slack_lower(w) * z_l - current_mu
            comp_u = box.slack_upper(w) * z_u - current_mu
            comp = max(
                float(np.max(np.abs(comp_l[box.has_lower]), initial=0.0)),
                float(np.max(np.abs(comp_u[box.has_upper]), initial=0.0)),
            )
        return (
            float(np.max(np.abs(dual), initial=0.0)),
            float(np.max(np.abs(cons), initial=0.0)),
            comp,
        )

    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        f = nlp.objective(w)
        grad = nlp.gradient(w)
        cons = nlp.constraints(w)
        jac = nlp.jacobian(w)
        if not (math.isfinite(f) and np.all(np.isfinite(grad)) and np.all(np.isfinite(cons))):
            status = "evaluation_error"
            break

        dual_inf, primal_inf, comp0 = residuals(0.0)
        comp_cap = config.comp_tolerance if config.comp_tolerance is not None else 10.0 * tol
        if dual_inf <= tol and primal_inf <= tol and comp0 <= comp_cap:
            status = "optimal"
            break
        if box.bounded:
            _, _, comp_mu = residuals(mu)
            err_mu = max(dual_inf, primal_inf, comp_mu)
            if mu > config.barrier_min and err_mu <= 10.0 * mu:
                mu = max(config.barrier_min, min(0.2 * mu, mu**1.5))
                # Re-center the bound duals so the condensed curvature
                # z/s stays within two orders of the new barrier target,
                # and start a fresh filter for the new barrier problem.
                s_l = box.slack_lower(w)
                s_u = box.slack_upper(w)
                z_l = np.where(box.has_lower, np.clip(z_l, mu / (100.0 * s_l), 100.0 * mu / s_l), 0.0)
                z_u = np.where(box.has_upper, np.clip(z_u, mu / (100.0 * s_u), 100.0 * mu / s_u), 0.0)
                filter_pairs.clear()

        hess = nlp.lagrangian_hessian(w, nu)
        sigma = np.where(box.has_lower, z_l / box.slack_lower(w), 0.0)
        sigma += np.where(box.has_upper, z_u / box.slack_upper(w), 0.0)

        grad_phi = grad + box.barrier_gradient(w, mu)
        rhs = np.concatenate((-(grad_phi + jac.T @ nu), -cons))

        # Increase the primal regularization until the KKT matrix has the
        # inertia (nv, nc, 0) of a second-order sufficient point, which
        # bounds the step and makes it usable for the filter line search.
        # Zero eigenvalues signal a rank-deficient Jacobian and bring in a
        # small dual regularization instead, since no amount of primal
        # shifting removes them. Oversized systems skip the dense inertia
        # count and fall back to a curvature test on the step.
        check_inertia = nv + nc <= _INERTIA_SIZE_LIMIT
        delta = 0.0 if delta_warm == 0.0 else max(config.reg_initial, delta_warm / 3.0)
        delta_c = 0.0
        step = None
        solve_failures = 0
        while True:
            primal_block = hess + sp.diags(sigma + delta, format="csc")
            dual_block = -delta_c * sp.identity(nc, format="csc") if delta_c > 0.0 else None
            kkt = sp.bmat([[primal_block, jac.T], [jac, dual_block]], format="csc")
            if not np.all(np.isfinite(kkt.data)):
                raise LinearSolveError("KKT matrix contains non-finite entries")
            usable = True
            n_zero = 0
            solve_failed = False
            if check_inertia:
                n_pos, n_neg, n_zero = kkt_inertia(kkt)
                usable = n_pos == nv and n_neg == nc and n_zero == 0
            if usable:
                try:
                    factor = KktFactorization(kkt)
                    step = factor.solve(rhs)
                except LinearSolveError:
                    step = None
                    usable = False
                    solve_failed = True
            if usable and step is not None and not check_inertia:
                dw = step[:nv]
                curvature = float(dw @ (primal_block @ dw))
                usable = curvature >= 1e-12 * float(dw @ dw)
            if usable and step is not None:
                break
            solve_failures += int(solve_failed)
            if n_zero > 0 or solve_failures >= 2:
                # The constraint Jacobian is (near-)rank-deficient here; a
                # small dual shift restores a nonsingular saddle system.
                scale = float(np.max(np.abs(kkt.data), initial=1.0))
                delta_c = max(1e-8, 1e-12 * scale, 100.0 * delta_c)
            if n_zero == 0:
                delta = config.reg_initial if delta == 0.0 else 10.0 * delta
            if delta > config.reg_max or delta_c > config.reg_max:
                raise LinearSolveError(
                    f"no usable step up to regularization {config.reg_max:.1e}; "
                    "the KKT system appears singular"
                )
        dw = step[:nv]
        dnu = step[nv:]
        s_l = box.slack_lower(w)
        s_u = box.slack_upper(w)
        dz_l = np.where(box.has_lower, mu / s_l - z_l - (z_l / s_l) * dw, 0.0)
        dz_u = np.where(box.has_upper, mu / s_u - z_u + (z_u / s_u) * dw, 0.0)

        tau_ftb = max(0.99, 1.0 - mu) if box.bounded else 1.0
        alpha_max = _fraction_to_boundary(w, dw, box.lower, box.upper, tau_ftb) if box.bounded else 1.0
        alpha_z = 1.0
        if box.bounded:
            zeros = np.zeros(nv)
            infs = np.full(nv, np.inf)
            alpha_z = min(
                _fraction_to_boundary(z_l, dz_l, zeros, infs, tau_ftb),
                _fraction_to_boundary(z_u, dz_u, zeros, infs, tau_ftb),
            )

        # Filter line search: a step passes either by decreasing the barrier
        # objective phi (when its predicted decrease dominates the current
        # infeasibility) or by improving the (theta, phi) pair against the
        # filter of previously accepted corners. Constraint violation may
        # grow transiently, which a penalty merit would forbid even when
        # phi makes solid progress.
        theta = float(np.sum(np.abs(cons)))
        phi0 = f + box.barrier_value(w, mu)
        dphi = float(grad_phi @ dw)
        if theta_cap is None:
            theta_cap = 1e4 * max(1.0, theta)
            theta_small = 1e-4 * max(1.0, theta)

        def acceptable(theta_try: float, phi_try: float, alpha_try: float) -> bool:
            if not (math.isfinite(theta_try) and math.isfinite(phi_try)):
                return False
            if theta_try > theta_cap:
                return False
            if any(theta_try >= ft and phi_try >= fp for ft, fp in filter_pairs):
                return False
            switching = dphi < 0.0 and alpha_try * (-dphi) ** _S_PHI > _DELTA_SW * theta**_S_THETA
            if theta <= theta_small and switching:
                return phi_try <= phi0 + config.armijo_constant * alpha_try * dphi
            return theta_try <= (1.0 - _GAMMA_THETA) * theta or phi_try <= phi0 - _GAMMA_PHI * theta

        if dphi < 0.0 and theta > 0.0:
            alpha_min = 0.05 * min(
                _GAMMA_THETA,
                _GAMMA_PHI * theta / (-dphi),
                _DELTA_SW * theta**_S_THETA / (-dphi) ** _S_PHI,
            )
        elif dphi < 0.0:
            alpha_min = config.step_min
        else:
            alpha_min = 0.05 * _GAMMA_THETA
        alpha_min = max(config.step_min, min(alpha_min, 0.5 * alpha_max))

        alpha = alpha_max
        accepted = False
        w_step = alpha * dw
        soc_open = True
        if float(np.max(np.abs(dw), initial=0.0)) <= 1e-12 * max(1.0, float(np.max(np.abs(w)))):
            # Pure dual-centering step; the acceptance test cannot see it.
            accepted = True
        while not accepted and alpha >= alpha_min:
            w_try = w + alpha * dw
            cons_try = nlp.constraints(w_try)
            theta_try = float(np.sum(np.abs(cons_try)))
            phi_try = nlp.objective(w_try) + box.barrier_value(w_try, mu)
            if acceptable(theta_try, phi_try, alpha):
                accepted = True
                w_step = alpha * dw
                break
            if soc_open and alpha == alpha_max and theta_try >= theta:
                # Second-order correction: cancel the constraint curvature
                # picked up along the full step, reusing the factorization.
                soc_open = False
                try:
                    soc = factor.solve(np.concatenate((np.zeros(nv), -cons_try)))
                except LinearSolveError:
                    soc = None
                if soc is not None:
                    disp = alpha * dw + soc[:nv]
                    beta = (
                        _fraction_to_boundary(w, disp, box.lower, box.upper, tau_ftb)
                        if box.bounded
                        else 1.0
                    )
                    w_soc = w + beta * disp
                    theta_soc = float(np.sum(np.abs(nlp.constraints(w_soc))))
                    phi_soc = nlp.objective(w_soc) + box.barrier_value(w_soc, mu)
                    if acceptable(theta_soc, phi_soc, alpha):
                        accepted = True
                        w_step = beta * disp
                        break
            alpha *= config.backtrack_factor
        if not accepted:
            stalls += 1
            if stalls > 10:
                status = "line_search_failure"
                break
            if theta > 10.0 * tol and config.restoration_steps > 0:
                # The filter wedged the iterate; pull it back toward the
                # constraint manifold and start over from there.
                w = _restore_feasibility(nlp, w, box, target=tol, max_steps=config.restoration_steps)
                s_l = box.slack_lower(w)
                s_u = box.slack_upper(w)
                z_l = np.where(box.has_lower, np.clip(z_l, mu / (100.0 * s_l), 100.0 * mu / s_l), 0.0)
                z_u = np.where(box.has_upper, np.clip(z_u, mu / (100.0 * s_u), 100.0 * mu / s_u), 0.0)
                filter_pairs.clear()
            delta_warm = max(config.reg_initial, 10.0 * max(delta, config.reg_initial))
            continue
        stalls = 0
        switching_accepted = (
            dphi < 0.0
            and alpha * (-dphi) ** _S_PHI > _DELTA_SW * theta**_S_THETA
            and theta <= theta_small
        )
        if not switching_accepted:
            filter_pairs.append(((1.0 - _GAMMA_THETA) * theta, phi0 - _GAMMA_PHI * theta))

        w = w + w_step
        nu = nu + alpha * dnu
        if box.bounded:
            z_l = z_l + alpha_z * dz_l
            z_u = z_u + alpha_z * dz_u
            s_l = box.slack_lower(w)
            s_u = box.slack_upper(w)
            z_l = np.where(box.has_lower, np.clip(z_l, mu / (_KAPPA_SIGMA * s_l), _KAPPA_SIGMA * mu / s_l), 0.0)
            z_u = np.where(box.has_upper, np.clip(z_u, mu / (_KAPPA_SIGMA * s_u), _KAPPA_SIGMA * mu / s_u), 0.0)
        delta_warm = delta

        log.append(
            IterationRecord(
                iteration=iteration,
                barrier=mu,
                objective=f,
                dual_infeasibility=dual_inf,
                primal_infeasibility=primal_inf,
                complementarity=comp0,
                step_length=alpha,
                regularization=delta,
            )
        )
        if config.verbose:
            logger.info(
                "iter %3d mu=%8.2e f=%14.8e dual=%8.2e primal=%8.2e comp=%8.2e alpha=%8.2e delta=%8.2e",
                iteration,
                mu,
                f,
                dual_inf,
                primal_inf,
                comp0,
                alpha,
                delta,
            )
    else:
        iteration = config.max_iterations

    if status not in ("optimal",):
        f = nlp.objective(w)
        grad = nlp.gradient(w)
        cons = nlp.constraints(w)
        jac = nlp.jacobian(w)
    dual_inf, primal_inf, comp0 = residuals(0.0)
    return NlpSolution(
        primal=w,
        multipliers=nu,
        z_lower=z_l,
        z_upper=z_u,
        objective=float(nlp.objective(w)),
        kkt_residual=max(dual_inf, primal_inf),
        complementarity=comp0,
        iterations=iteration,
        status=status,
        log=log,
    )

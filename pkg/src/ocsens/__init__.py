"""Collocation-based optimal control with component-model sensitivities.

The package solves Bolza problems by flipped Radau collocation and an
interior-point NLP solver, differentiates the converged solution with
respect to an embedded component model, and turns those derivatives into
quantity-of-interest error estimates and worst-case bounds.
"""

from .adjoint import (
    AdjointSolution,
    ErrorBands,
    WorstCasePerturbation,
    lp_worst_case,
    qoi_directional_derivative,
    qoi_error_bound,
    qoi_error_estimate,
    solve_adjoint_system,
)
from .collocation import CollocationGrid, uniform_grid
from .problem import (
    Bounds,
    CallableComponent,
    CombinedComponent,
    ComponentFunction,
    Dims,
    OcpProblem,
    ProblemFunctions,
    QoiFunctions,
    Trajectory,
)
from .sensitivity import (
    LqData,
    PerturbationData,
    SensitivitySolution,
    SsocViolationError,
    assemble_lq_data,
    forward_qoi_derivative,
    sample_perturbation,
    solve_sensitivity,
)
from .solver import (
    LinearSolveError,
    NlpSolution,
    SolverConfig,
    solve,
    solve_kkt_linear,
)
from .transcription import Nlp, VariableLayout, transcribe

__version__ = "0.1.0"

__all__ = [
    "AdjointSolution",
    "Bounds",
    "CallableComponent",
    "CollocationGrid",
    "CombinedComponent",
    "ComponentFunction",
    "Dims",
    "ErrorBands",
    "LinearSolveError",
    "LqData",
    "Nlp",
    "NlpSolution",
    "OcpProblem",
    "PerturbationData",
    "ProblemFunctions",
    "QoiFunctions",
    "SensitivitySolution",
    "SolverConfig",
    "SsocViolationError",
    "Trajectory",
    "VariableLayout",
    "WorstCasePerturbation",
    "assemble_lq_data",
    "forward_qoi_derivative",
    "lp_worst_case",
    "qoi_directional_derivative",
    "qoi_error_bound",
    "qoi_error_estimate",
    "sample_perturbation",
    "solve",
    "solve_adjoint_system",
    "solve_kkt_linear",
    "solve_sensitivity",
    "transcribe",
    "uniform_grid",
    "__version__",
]

"""Session fixtures; the flight benchmark is solved once and shared."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import pytest

from ocsens import (
    SolverConfig,
    assemble_lq_data,
    solve,
    solve_adjoint_system,
    transcribe,
    uniform_grid,
)
from ocsens import hypersonic, reporting
from ocsens.adjoint import AdjointSolution
from ocsens.problem import Trajectory
from ocsens.sensitivity import LqData
from ocsens.solver import NlpSolution
from ocsens.transcription import Nlp

GRID = (32, 4)
EPS_SWEEP = (0.01, 0.02, 0.03, 0.04, 0.05)


@dataclass(frozen=True)
class ReferenceBundle:
    nlp: Nlp
    sol: NlpSolution
    traj: Trajectory


@dataclass(frozen=True)
class TrackingBundle:
    nlp: Nlp
    sol: NlpSolution
    lq: LqData
    adj: AdjointSolution
    base: Trajectory


@pytest.fixture(scope="session")
def reference_bundle() -> ReferenceBundle:
    nlp = transcribe(hypersonic.build_max_downrange("kgkms"), uniform_grid(*GRID))
    config = SolverConfig(
        max_iterations=400,
        variable_scaling=hypersonic.downrange_scaling(nlp, "kgkms"),
    )
    sol = solve(nlp, hypersonic.max_downrange_guess(nlp), config)
    assert sol.status == "optimal", sol.status
    traj = nlp.unpack(sol.primal, sol.multipliers)
    return ReferenceBundle(nlp=nlp, sol=sol, traj=traj)


@pytest.fixture(scope="session")
def tracking_bundle(reference_bundle) -> TrackingBundle:
    problem = hypersonic.build_tracking(reference_bundle.traj, "kgkms")
    nlp = transcribe(problem, reference_bundle.traj.grid)
    sol = solve(nlp, nlp.pack(reference_bundle.traj), SolverConfig(max_iterations=400))
    assert sol.status == "optimal", sol.status
    lq = assemble_lq_data(nlp, sol)
    adj = solve_adjoint_system(lq, hypersonic.downrange_qoi())
    return TrackingBundle(nlp=nlp, sol=sol, lq=lq, adj=adj, base=lq.base)


@pytest.fixture(scope="session")
def truth_solutions(reference_bundle) -> dict:
    """Tracking re-solves against the perturbed model, one per sweep value."""
    nlps = []
    for eps in EPS_SWEEP:
        problem = hypersonic.build_tracking(
            reference_bundle.traj, "kgkms", model=hypersonic.true_aero(eps)
        )
        nlps.append(transcribe(problem, reference_bundle.traj.grid))
    w0 = nlps[0].pack(reference_bundle.traj)
    config = SolverConfig(max_iterations=400)
    with ThreadPoolExecutor(max_workers=4) as pool:
        sols = list(pool.map(lambda nlp: solve(nlp, w0, config), nlps))
    out = {}
    for eps, nlp, sol in zip(EPS_SWEEP, nlps, sols):
        assert sol.status == "optimal", (eps, sol.status)
        out[eps] = (nlp.unpack(sol.primal, sol.multipliers), sol)
    return out


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory, reference_bundle):
    """Run directory seeded with the stored reference the CLI expects."""
    out = tmp_path_factory.mktemp("flight-runs")
    payload = reporting.trajectory_payload(
        reference_bundle.traj,
        "kgkms",
        {
            "problem": "max-downrange",
            "objective": reference_bundle.sol.objective,
            "kkt_residual": reference_bundle.sol.kkt_residual,
        },
    )
    reporting.write_json(out / "reference.json", payload)
    return out

"""Command line workflows on the dimensionless check problem."""

import json

import numpy as np
import pytest

import toys
from ocsens import cli


def _read_table(path):
    meta = {}
    rows = []
    header = None
    for line in path.read_text().splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        elif header is None:
            header = line.split(",")
        else:
            rows.append([float(v) for v in line.split(",")])
    return meta, header, np.asarray(rows)


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy-runs")
    args = ["--problem", "toy-lq", "--grid", "8x4", "--out", str(out)]
    assert cli.main(["solve-reference", *args]) == 0
    assert cli.main(["sensitivity-predict", *args, "--eps", "0.05"]) == 0
    assert cli.main(["qoi-study", *args, "--eps", "0.01,0.05"]) == 0
    return out


def test_run_config_validation():
    with pytest.raises(cli.ConfigError):
        cli.RunConfig(problem="orbit").validate()
    with pytest.raises(cli.ConfigError):
        cli.RunConfig(intervals=0).validate()
    with pytest.raises(cli.ConfigError):
        cli.RunConfig(eps=(0.1, -0.2)).validate()
    with pytest.raises(cli.ConfigError):
        cli.RunConfig(units="imperial").validate()
    cli.RunConfig().validate()


def test_config_digest_tracks_fields():
    base = cli.RunConfig()
    assert base.digest() == cli.RunConfig().digest()
    assert base.digest() != cli.RunConfig(intervals=16).digest()
    assert len(base.digest()) == 64


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"problem": "toy-lq", "mesh": 4}')
    with pytest.raises(cli.ConfigError, match="mesh"):
        cli.load_config(path)


def test_load_config_rejects_bad_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"problem": ')
    with pytest.raises(cli.ConfigError):
        cli.load_config(path)


def test_load_config_reads_grid_block(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "problem": "toy-lq",
                "grid": {"intervals": 6, "nodes": 3},
                "eps": [0.1],
                "kkt_tolerance": 1e-9,
            }
        )
    )
    cfg = cli.load_config(path)
    assert cfg.intervals == 6
    assert cfg.nodes == 3
    assert cfg.eps == (0.1,)
    assert cfg.kkt_tolerance == 1e-9


def test_usage_errors_exit_with_code_two(tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["solve-reference", "--grid", "8by4"])
    assert excinfo.value.code == 2
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["solve-reference", "--eps", "a,b"])
    assert excinfo.value.code == 2
    assert cli.main(["solve-reference", "--units", "imperial", "--out", str(tmp_path)]) == 2


def test_missing_reference_exits_with_code_two(tmp_path, capsys):
    rc = cli.main(["sensitivity-predict", "--out", str(tmp_path), "--eps", "0.05"])
    assert rc == 2
    assert "solve-reference" in capsys.readouterr().err


def test_reference_outputs_exist(toy_run):
    for name in (
        "reference.json",
        "reference_report.json",
        "reference_trajectory.csv",
        "reference_trajectory.png",
    ):
        assert (toy_run / name).exists()


def test_reference_report_contents(toy_run):
    report = json.loads((toy_run / "reference_report.json").read_text())
    assert report["command"] == "solve-reference"
    assert report["problem"] == "toy-lq"
    assert report["grid"] == {"intervals": 8, "nodes": 4}
    assert report["status"] == "optimal"
    assert report["kkt_residual"] < 1e-8
    assert report["objective"] == pytest.approx(toys.LQ_OBJECTIVE, abs=1e-9)
    assert report["qoi"] == pytest.approx(toys.lq_state(1.0), abs=1e-9)
    assert report["duration_T"] == 1.0
    assert len(report["config_hash"]) == 64


def test_trajectory_csv_contract(toy_run):
    meta, header, rows = _read_table(toy_run / "reference_trajectory.csv")
    assert header == ["t", "x", "u"]
    assert meta["command"] == "solve-reference"
    assert meta["problem"] == "toy-lq"
    assert meta["grid"] == "8x4"
    assert "timestamp" not in meta
    assert rows.shape == (201, 3)
    assert np.max(np.abs(rows[:, 1] - toys.lq_state(rows[:, 0]))) < 1e-8
    assert np.max(np.abs(rows[:, 2] + toys.lq_costate(rows[:, 0]))) < 1e-6


def test_predict_outputs_are_exact_for_linear_quadratic(toy_run):
    _, header, predicted = _read_table(toy_run / "predict_eps0.05_predicted.csv")
    assert header == ["t", "x", "u"]
    _, _, truth = _read_table(toy_run / "predict_eps0.05_truth.csv")
    _, _, reference = _read_table(toy_run / "predict_eps0.05_reference.csv")
    assert predicted.shape == truth.shape == reference.shape == (201, 3)
    # sensitivity prediction is exact for this problem, re-solve agrees
    assert np.max(np.abs(predicted - truth)) < 1e-8
    assert np.max(np.abs(reference - truth)) > 1e-3
    summary = json.loads((toy_run / "predict_summary.json").read_text())
    entry = summary["eps"]["0.05"]
    assert entry["predicted_vs_truth"]["x"] < 1e-9
    assert entry["reference_vs_truth"]["x"] > 1e-3
    assert (toy_run / "predict_eps0.05.png").exists()


def test_qoi_study_matches_closed_form(toy_run):
    meta, header, rows = _read_table(toy_run / "qoi_study.csv")
    assert header == ["eps", "estimate", "true_error", "bound"]
    assert meta["eps"] == "0.01,0.05"
    assert rows.shape == (2, 4)
    for eps, estimate, true_error, bound in rows:
        assert estimate == pytest.approx(eps * toys.TANH1, abs=1e-10)
        assert true_error == pytest.approx(eps * toys.TANH1, abs=1e-9)
        assert bound == pytest.approx(eps * toys.TANH1, abs=1e-10)
        assert bound >= estimate - 1e-14
    assert (toy_run / "qoi_study.png").exists()


def test_qoi_study_reruns_are_byte_identical(toy_run):
    first = (toy_run / "qoi_study.csv").read_bytes()
    args = ["--problem", "toy-lq", "--grid", "8x4", "--out", str(toy_run)]
    assert cli.main(["qoi-study", *args, "--eps", "0.01,0.05"]) == 0
    assert (toy_run / "qoi_study.csv").read_bytes() == first


def test_config_file_and_flag_overrides(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "problem": "toy-lq",
                "grid": {"intervals": 6, "nodes": 3},
                "out_dir": str(tmp_path / "runs"),
            }
        )
    )
    assert cli.main(["solve-reference", "--config", str(config)]) == 0
    report = json.loads((tmp_path / "runs" / "reference_report.json").read_text())
    assert report["grid"] == {"intervals": 6, "nodes": 3}
    assert cli.main(["solve-reference", "--config", str(config), "--grid", "4x3"]) == 0
    override = json.loads((tmp_path / "runs" / "reference_report.json").read_text())
    assert override["grid"] == {"intervals": 4, "nodes": 3}
    assert override["config_hash"] != report["config_hash"]


def test_check_command_passes(capsys):
    assert cli.main(["check"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out
    assert "[FAIL]" not in out
    assert "0 failed" in out


def test_check_command_catches_injected_fault(capsys):
    assert cli.main(["check", "--inject-fault", "jacobian"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL]" in out
    assert "constraint row" in out


def test_toy_component_is_constant():
    comp = cli.toy_component(0.3)
    y = np.zeros(2)
    assert np.array_equal(comp.eval(0.0, y), [0.3])
    assert np.all(comp.jac_y(0.0, y) == 0.0)

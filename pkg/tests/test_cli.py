import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from varpath.cli import main
from varpath.dynamics import Trajectory
from varpath.geometry import bundled_geometry


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def report(capsys, *argv):
    code, out = run(capsys, *argv)
    return code, json.loads(out)


def test_verify_action_weyl(capsys):
    code, rep = report(capsys, "verify-action", "--geometry", "weyl2d", "--v0", "1,0", "--lambda-span", "0,0.5")
    assert code == 0 and rep["pass"] is True
    assert rep["results"]["action"]["el_residual_max"] <= 1e-6
    assert rep["results"]["action"]["value"] == pytest.approx(0.5, abs=1e-9)
    assert set(rep) == {"config", "results", "pass"}


def test_verify_action_fails_on_non_integrable(capsys):
    code, rep = report(capsys, "verify-action", "--geometry", "nonweyl_q111", "--v0", "1,0.5",
                       "--steps", "200")
    assert code == 1 and rep["pass"] is False


def test_geodesic_and_autoparallel_files_agree(capsys, tmp_path):
    out = {}
    for kind in ("geodesic", "autoparallel"):
        path = tmp_path / f"{kind}.csv"
        code, _ = run(capsys, "integrate", "--geometry", "sphere2", "--kind", kind, "--v0", "0.3,1",
                      "--lambda-span", "0,2", "--steps", "400", "--format", "csv", "--output", str(path))
        assert code == 0
        out[kind] = Trajectory.from_csv(path.read_text())
    assert np.max(np.abs(out["geodesic"].x - out["autoparallel"].x)) <= 1e-9
    assert path.read_text().splitlines()[0] == "lambda,x0,x1,v0,v1"


def test_integrate_json_to_stdout(capsys):
    code, rep = report(capsys, "integrate", "--geometry", "weyl2d", "--v0", "1,0", "--lambda-span", "0,0.5",
                       "--steps", "100")
    assert code == 0
    tr = Trajectory.from_dict(rep["results"]["trajectory"])
    assert abs(tr.x[-1, 0] - np.log(2)) <= 1e-7


def test_malformed_geometry_names_key(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dim": 2, "coords": ["x", "y"], "metric": {"0,0": "1", "1,1": "1"},
                               "base_point": [0, 0], "nonmetricity": {"0,0,5": "1"}}))
    code, rep = report(capsys, "inspect", "--geometry", str(bad))
    assert code != 0 and rep["pass"] is False
    assert rep["error"]["key"] == "nonmetricity.0,0,5"
    assert rep["error"]["type"] == "SchemaError"


def test_missing_file_is_structured_error(capsys, tmp_path):
    code, rep = report(capsys, "inspect", "--geometry", str(tmp_path / "nope.json"))
    assert code == 2 and rep["error"]["type"] == "FileNotFoundError"


def test_missing_velocity(capsys):
    code, rep = report(capsys, "verify-action", "--geometry", "weyl2d")
    assert code == 2 and "--v0" in rep["error"]["message"]


def test_wrong_vector_length(capsys):
    code, rep = report(capsys, "connection", "--geometry", "weyl2d", "--x0", "1,2,3")
    assert code == 2 and "--x0" in rep["error"]["message"]


def test_inspect_echoes_spec(capsys, tmp_path):
    path = tmp_path / "w.json"
    path.write_text(json.dumps(bundled_geometry("weyl2d").to_document()))
    code, rep = report(capsys, "inspect", "--geometry", str(path))
    assert code == 0
    assert rep["results"]["mode"] == "weyl"
    assert rep["results"]["base_point"]["Q"][0][0][0] == 2.0
    assert rep["config"]["geometry"] == str(path)


@pytest.mark.parametrize(
    "argv",
    [
        ("connection", "--geometry", "weyl2d", "--x0", "0.1,0.2"),
        ("solve-h", "--geometry", "weyl2d", "--x0", "0.5,0.3"),
        ("holonomy", "--geometry", "curved_nonweyl", "--x0", "0.2,0.2", "--steps", "4"),
        ("check-helmholtz", "--geometry", "weyl2d", "--samples", "5"),
    ],
)
def test_subcommands_pass_on_integrable_cases(capsys, argv):
    code, rep = report(capsys, *argv)
    assert code == 0 and rep["pass"] is True
    assert rep["config"]["subcommand"] == argv[0]


def test_solve_h_values(capsys):
    _, rep = report(capsys, "solve-h", "--geometry", "weyl2d", "--x0", "0.5,0.3")
    H = np.array(rep["results"]["state"]["H"])
    assert np.allclose(H, np.exp(-1) * np.eye(2), atol=1e-8)
    assert rep["results"]["degeneracy"]["degenerate"] is False


def test_holonomy_fails_on_non_integrable(capsys):
    code, rep = report(capsys, "holonomy", "--geometry", "nonweyl_q111", "--x0", "0.2,0.2", "--steps", "4")
    assert code == 1
    assert len(rep["results"]["table"]) == 5


def test_reports_byte_identical_and_thread_independent(capsys, tmp_path, monkeypatch):
    path = tmp_path / "r.json"
    argv = ["check-helmholtz", "--geometry", "curved_nonweyl", "--samples", "8", "--seed", "11",
            "--output", str(path)]
    main(argv)
    first = path.read_bytes()
    main(argv)
    assert path.read_bytes() == first
    monkeypatch.setenv("VARPATH_THREADS", "4")
    main(argv)
    assert path.read_bytes() == first
    main(argv[:-3] + ["12", "--output", str(path)])
    assert path.read_bytes() != first


def test_config_file_wins_with_warning(capsys, tmp_path, caplog):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"steps": 300, "lambda-span": [0, 0.25]}))
    with caplog.at_level(logging.WARNING, logger="varpath"):
        code, rep = report(capsys, "verify-action", "--geometry", "weyl2d", "--v0", "1,0", "--steps", "100",
                           "--config", str(cfg))
    assert code == 0
    assert rep["config"]["steps"] == 300 and rep["config"]["lambda_span"] == [0, 0.25]
    assert rep["results"]["trajectory_stats"]["steps"] == 300
    assert any("--steps" in r.getMessage() for r in caplog.records)


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"stepz": 3}))
    code, rep = report(capsys, "inspect", "--geometry", "weyl2d", "--config", str(cfg))
    assert code == 2 and rep["error"]["key"] == "config.stepz"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "varpath", "inspect", "--geometry", "flat2d"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["pass"] is True

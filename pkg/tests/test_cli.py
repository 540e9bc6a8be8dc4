import json
import subprocess
import sys

import numpy as np
import pytest

from safeguard import cli, simkit, sysmodel

RUN = [sys.executable, "-m", "safeguard.cli"]


def run_cli(*args, cwd=None):
    return subprocess.run(RUN + list(args), capture_output=True, text=True,
                          cwd=cwd)


@pytest.fixture(scope="module")
def jj_model_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "jj.json"
    sysmodel.save_model(simkit.josephson_case_study(50.0), path,
                        phi_kind="sin")
    return str(path)


def strip_timestamp(text):
    doc = json.loads(text)
    doc.pop("generated_at", None)
    return doc


class TestCaseStudyCommand:
    def test_verify_tight_safe_set_exits_2(self, tmp_path):
        res = run_cli("case-study", "--stage", "verify", "--safe", "50",
                      "--out", str(tmp_path))
        assert res.returncode == cli.EXIT_NO_CERTIFICATE
        doc = strip_timestamp(res.stdout)
        assert doc["found"] is False
        assert "not a proof of unsafety" in doc["note"]

    def test_verify_enlarged_safe_set_exits_0(self, tmp_path):
        res = run_cli("case-study", "--stage", "verify", "--safe", "11",
                      "--out", str(tmp_path))
        assert res.returncode == cli.EXIT_OK
        doc = strip_timestamp(res.stdout)
        assert doc["found"] is True
        assert doc["certificate"]["contained"] is True
        written = json.loads((tmp_path / "case-study-verify.json").read_text())
        assert written["found"] is True
        assert (tmp_path / "rpi_ellipsoid.json").exists()

    def test_synth_stage_writes_ellipsoids(self, tmp_path):
        res = run_cli("case-study", "--stage", "synth",
                      "--alphas", "0.05,0.05,0.1,0.99",
                      "--out", str(tmp_path))
        assert res.returncode == cli.EXIT_OK, res.stderr
        doc = strip_timestamp(res.stdout)
        assert doc["contained"] is True
        assert doc["schema"] == 1
        assert np.asarray(doc["K"]["A2"]).shape == (3, 3)
        assert (tmp_path / "projection_ellipsoid.json").exists()
        assert (tmp_path / "safe_ellipsoid.json").exists()


class TestModelCommands:
    def test_validate_ok(self, jj_model_path, tmp_path):
        res = run_cli("validate", "--model", jj_model_path,
                      "--out", str(tmp_path))
        assert res.returncode == cli.EXIT_OK
        doc = strip_timestamp(res.stdout)
        assert doc["ok"] is True
        assert doc["attack"]["q3_pd"] is True
        assert doc["sector"]["ok"] is True

    def test_validate_bad_q3(self, jj_model_path, tmp_path):
        doc = json.loads(open(jj_model_path).read())
        doc["attack"]["Q3"] = [[-1.0]]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        res = run_cli("validate", "--model", str(bad))
        assert res.returncode == cli.EXIT_ERROR
        out = strip_timestamp(res.stdout)
        assert out["ok"] is False
        assert any("Q3 not positive definite" in e for e in out["errors"])

    def test_validate_dimension_diagnostics(self, jj_model_path, tmp_path):
        doc = json.loads(open(jj_model_path).read())
        doc["plant"]["B"] = [[0.0], [1.0]]
        bad = tmp_path / "bad_dims.json"
        bad.write_text(json.dumps(doc))
        res = run_cli("validate", "--model", str(bad))
        assert res.returncode == cli.EXIT_ERROR
        assert "plant.B" in res.stderr + res.stdout

    def test_verify_model_file(self, jj_model_path):
        res = run_cli("verify", "--model", jj_model_path, "--safe", "11")
        assert res.returncode == cli.EXIT_OK

    def test_missing_model_is_error(self):
        res = run_cli("verify", "--model", "/nonexistent/model.json")
        assert res.returncode == cli.EXIT_ERROR

    def test_usage_error_is_exit_1(self):
        res = run_cli("no-such-command")
        assert res.returncode == cli.EXIT_ERROR


class TestSimulateCommand:
    def test_simulate_writes_csv(self, jj_model_path, tmp_path):
        res = run_cli("simulate", "--model", jj_model_path,
                      "--horizon", "0.5", "--seed", "3",
                      "--out", str(tmp_path))
        assert res.returncode == cli.EXIT_OK
        doc = strip_timestamp(res.stdout)
        assert "max_safe_quadratic" in doc
        header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
        assert header.startswith("t,zeta1")

    def test_deterministic_given_seed(self, jj_model_path):
        a = run_cli("simulate", "--model", jj_model_path, "--horizon",
                    "0.2", "--seed", "7")
        b = run_cli("simulate", "--model", jj_model_path, "--horizon",
                    "0.2", "--seed", "7")
        assert strip_timestamp(a.stdout) == strip_timestamp(b.stdout)


def test_verify_reports_deterministic(jj_model_path):
    a = run_cli("verify", "--model", jj_model_path, "--safe", "11")
    b = run_cli("verify", "--model", jj_model_path, "--safe", "11")
    assert strip_timestamp(a.stdout) == strip_timestamp(b.stdout)


def test_grid_override(jj_model_path, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"alpha1": [0.05], "alpha4": [0.99]}))
    res = run_cli("verify", "--model", jj_model_path, "--safe", "11",
                  "--grid", str(grid))
    doc = strip_timestamp(res.stdout)
    assert len(doc["grid"]) == 1

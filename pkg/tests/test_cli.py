import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import solved
from reachsos.certify import Certificate
from reachsos.cli import EXIT_EMPTY, EXIT_ERROR, EXIT_OK, main
from reachsos.sdp import import_sdpa


def run(tmp_path, *argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ex1a_k4(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ex1a_k4.json"
    code = main(["compute", "--spec", "ex1a", "--degree", "4", "--out", str(out)])
    return code, out


class TestCompute:
    def test_accepted_certificate(self, ex1a_k4):
        code, out = ex1a_k4
        assert code == EXIT_OK
        cert = Certificate.load(out)
        assert cert.objective_value == pytest.approx(solved("ex1a", 4)[5].objective_value, rel=1e-9)
        assert cert.max_residual <= 1e-6

    def test_manifest_contents(self, ex1a_k4):
        _, out = ex1a_k4
        man = json.loads(out.with_name(out.name + ".manifest.json").read_text())
        assert man["command"] == "compute"
        assert man["argv"][:2] == ["compute", "--spec"]
        for stage in ("geometry", "compile", "solve", "certify"):
            assert man["timings"][stage] >= 0
        assert man["sizes"]["free_vars"] == 35
        assert man["solver"]["iterations"] > 0
        assert man["seed"] == 0 and man["empty"] is False
        assert {"reachsos", "numpy", "scipy", "python"} <= set(man["versions"])
        assert len(man["spec_fingerprint"]) >= 16

    def test_empty_set_exits_2(self, tmp_path):
        out = tmp_path / "e.json"
        assert run(tmp_path, "compute", "--spec", "ex2b", "--degree", 4, "--out", out) == EXIT_EMPTY
        assert out.exists()
        man = json.loads((tmp_path / "e.json.manifest.json").read_text())
        assert man["empty"] is True and man["min_psi0"] > 0

    def test_missing_spec_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert run(tmp_path, "compute", "--spec", missing, "--degree", 4, "--out", tmp_path / "c.json") == EXIT_ERROR
        err = capsys.readouterr().err
        assert err.startswith("error [") and str(missing) in err

    def test_invalid_spec_is_tagged_with_model(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"name": "bad"}))
        assert run(tmp_path, "compute", "--spec", bad, "--degree", 4, "--out", tmp_path / "c.json") == EXIT_ERROR
        assert capsys.readouterr().err.startswith("error [model]:")

    def test_degree_too_low_is_a_config_error(self, tmp_path, capsys):
        code = run(tmp_path, "compute", "--spec", "ex1a", "--degree", 1, "--out", tmp_path / "c.json")
        assert code == EXIT_ERROR
        assert capsys.readouterr().err.startswith("error [model]: psi degree")

    def test_unusable_multiplier_degrees_are_tagged_with_soscompile(self, tmp_path, capsys):
        code = run(tmp_path, "compute", "--spec", "ex1a", "--degree", 4, "--multiplier-degrees=-2,2",
                   "--out", tmp_path / "c.json")
        assert code == EXIT_ERROR
        assert capsys.readouterr().err.startswith("error [soscompile]:")

    def test_solver_failure_exits_1(self, tmp_path, capsys):
        code = run(tmp_path, "compute", "--spec", "ex1a", "--degree", 4, "--max-iters", 2,
                   "--out", tmp_path / "c.json")
        assert code == EXIT_ERROR
        assert capsys.readouterr().err.startswith("error [sdp]:")

    def test_bad_arguments(self, tmp_path):
        assert run(tmp_path, "compute", "--spec", "ex1a") == EXIT_ERROR
        assert run(tmp_path, "frobnicate") == EXIT_ERROR

    def test_console_script_exit_code(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "reachsos", "compute", "--spec", "ex2b", "--degree", "4",
                               "--out", str(tmp_path / "e.json")], capture_output=True, text=True)
        assert proc.returncode == EXIT_EMPTY
        assert "empty" in proc.stdout


class TestValidate:
    def test_sound_certificate(self, tmp_path, ex1a_k4):
        _, cert_path = ex1a_k4
        out = tmp_path / "report.json"
        code = run(tmp_path, "validate", "--cert", cert_path, "--samples", 30, "--signals", 2, "--out", out)
        assert code == EXIT_OK
        rep = json.loads(out.read_text())
        assert rep["pass"] is True and rep["violations"] == []
        man = json.loads((tmp_path / "report.json.manifest.json").read_text())
        assert man["passed"] is True and man["seed"] == 0

    def test_planted_unsound_certificate(self, tmp_path, capsys):
        cert = solved("ex2a", 6)[5]
        path = tmp_path / "bad.json"
        cert.with_psi(cert.psi - 0.5).save(path)
        code = run(tmp_path, "validate", "--cert", path, "--samples", 100, "--signals", 2)
        assert code == EXIT_ERROR
        out = capsys.readouterr().out
        assert "violations" in out and " at t=" in out

    def test_empty_certificate(self, tmp_path, capsys):
        path = tmp_path / "e.json"
        solved("ex2b", 4)[5].save(path)
        assert run(tmp_path, "validate", "--cert", path, "--samples", 10) == EXIT_OK
        assert "empty" in capsys.readouterr().out


class TestHj2d:
    def test_field_and_contour(self, tmp_path):
        field, contour = tmp_path / "f.csv", tmp_path / "c.csv"
        assert run(tmp_path, "hj2d", "--spec", "ex1a", "--grid", 41, "--out", field, "--contour", contour) == EXIT_OK
        rows = field.read_text().splitlines()
        assert rows[0] == "x,y,u" and len(rows) == 41 * 41 + 1
        assert contour.read_text().splitlines()[0] == "curve_id,x,y"
        man = json.loads((tmp_path / "f.csv.manifest.json").read_text())
        assert man["grid"] == 41

    def test_grid_too_small(self, tmp_path, capsys):
        assert run(tmp_path, "hj2d", "--spec", "ex1a", "--grid", 2, "--out", tmp_path / "f.csv") == EXIT_ERROR
        assert capsys.readouterr().err.startswith("error [hjgrid]:")

    def test_seven_states_rejected(self, tmp_path, capsys):
        assert run(tmp_path, "hj2d", "--spec", "ex3", "--grid", 50, "--out", tmp_path / "f.csv") == EXIT_ERROR
        assert "error [hjgrid]:" in capsys.readouterr().err


class TestLevelset:
    def test_contour_of_accepted_certificate(self, tmp_path, ex1a_k4):
        _, cert_path = ex1a_k4
        out = tmp_path / "c.csv"
        assert run(tmp_path, "levelset", "--cert", cert_path, "--out", out, "--resolution", 120) == EXIT_OK
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["curve_id", "x", "y"] and len(rows) > 10
        cert = Certificate.load(cert_path)
        pts = np.array([[float(r[1]), float(r[2])] for r in rows[1:]])
        g = np.linspace(-0.7, 0.7, 15)
        scale = np.max(np.abs(cert.psi0_values(np.array([[a, b] for a in g for b in g]))))
        # marching squares is exact on cell edges up to the bilinear error
        assert np.max(np.abs(cert.psi0_values(pts))) <= 1e-2 * scale

    def test_empty_certificate_gives_header_only(self, tmp_path):
        path = tmp_path / "e.json"
        solved("ex2b", 4)[5].save(path)
        out = tmp_path / "c.csv"
        assert run(tmp_path, "levelset", "--cert", path, "--out", out) == EXIT_OK
        assert out.read_text().splitlines() == ["curve_id,x,y"]


class TestExportSdpa:
    def test_round_trip(self, tmp_path):
        out = tmp_path / "ex1a.dat-s"
        assert run(tmp_path, "export-sdpa", "--spec", "ex1a", "--degree", 4, "--out", out) == EXIT_OK
        inst = import_sdpa(out.read_bytes())
        ref = solved("ex1a", 4)[3]
        assert inst.n_free == ref.n_free and inst.block_dims == ref.block_dims
        assert np.array_equal(inst.b, ref.b)
        man = json.loads((tmp_path / "ex1a.dat-s.manifest.json").read_text())
        assert man["sizes"]["free_vars"] == 35
        assert man["objective_jacobian"] == pytest.approx(1.21)


class TestSweep:
    def test_two_degree_table(self, tmp_path):
        out = tmp_path / "sweep.csv"
        code = run(tmp_path, "sweep", "--spec", "ex2a", "--degrees", "4,6", "--out", out,
                   "--area-samples", 20000, "--cert-dir", tmp_path / "certs")
        assert code == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert [int(r["degree"]) for r in rows] == [4, 6]
        d = [float(r["d_star"]) for r in rows]
        assert d[1] <= d[0] + 1e-6
        assert all(float(r["area"]) > 0 and float(r["area_se"]) > 0 for r in rows)
        assert sorted(p.name for p in (tmp_path / "certs").iterdir()) == ["ex2a_k4.json", "ex2a_k6.json"]
        man = json.loads((tmp_path / "sweep.csv.manifest.json").read_text())
        assert man["d_star_non_increasing"] is True

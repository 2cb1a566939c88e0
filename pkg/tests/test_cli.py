import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hardygrid import cli
from hardygrid.grid import GridFunction, GridSpec, save_grid_function
from hardygrid.testfunctions import corpus_spec, haar_atom, smoothed_step


@pytest.fixture()
def atom_file(tmp_path):
    spec = corpus_spec(256)
    f = haar_atom(spec, 0.375, 0.5)
    path = tmp_path / "atom.json"
    save_grid_function(f, str(path))
    return str(path)


@pytest.fixture()
def mask_file(tmp_path):
    spec = GridSpec(1, 128, 1.0 / 128)
    v = np.zeros(128)
    v[16:80] = 1.0
    save_grid_function(GridFunction(spec, v), str(tmp_path / "mask.json"))
    return str(tmp_path / "mask.json")


class TestDecomposeCommand:
    def test_atom_input_succeeds(self, atom_file, tmp_path, capsys):
        out = str(tmp_path / "out")
        code = cli.main(["--out-dir", out, "decompose", "--input", atom_file, "--q", "2"])
        assert code == 0
        assert os.path.exists(os.path.join(out, "decomposition.json"))
        assert os.path.exists(os.path.join(out, "report.json"))
        report = json.load(open(os.path.join(out, "report.json")))
        assert report["all_ok"]
        dec = json.load(open(os.path.join(out, "decomposition.json")))
        assert dec["terms"]
        first_atom = dec["terms"][0]["atom_file"]
        assert os.path.exists(os.path.join(out, first_atom))
        assert "config" in dec

    def test_zero_input_precondition(self, tmp_path):
        spec = corpus_spec(256)
        path = tmp_path / "zero.json"
        save_grid_function(GridFunction(spec, np.zeros(256)), str(path))
        assert cli.main(["decompose", "--input", str(path)]) == 3

    def test_nonzero_mean_precondition(self, tmp_path):
        spec = corpus_spec(256)
        v = np.zeros(256)
        v[100:120] = 1.0
        path = tmp_path / "bad.json"
        save_grid_function(GridFunction(spec, v), str(path))
        assert cli.main(["decompose", "--input", str(path)]) == 3

    def test_corrupted_json_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{ not json")
        assert cli.main(["decompose", "--input", str(path)]) == 2

    def test_continuous_mode(self, tmp_path):
        spec = corpus_spec(256)
        f = smoothed_step(spec, 0.44, 0.012)
        path = tmp_path / "step.json"
        save_grid_function(f, str(path))
        out = str(tmp_path / "outc")
        code = cli.main(["--out-dir", out, "decompose", "--input", str(path), "--q", "inf"])
        assert code == 0


class TestNormsCommand:
    def test_report_fields(self, atom_file, capsys):
        code = cli.main(["norms", "--input", atom_file, "--q", "2"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert payload["h1_proxy"] > 0
        assert payload["lp_value"] > 0
        assert "dictionary-relative" in payload["lp_value_note"]

    def test_band_exit_code(self, atom_file):
        code = cli.main(
            ["norms", "--input", atom_file, "--q", "2", "--band-low", "0", "--band-high", "1e-9"]
        )
        assert code == 4


class TestWhitneyCommand:
    def test_cover_and_report(self, mask_file, tmp_path, capsys):
        out = str(tmp_path / "wout")
        code = cli.main(["--out-dir", out, "whitney", "--omega", mask_file, "--eta", "0.125"])
        assert code == 0
        cover = json.load(open(os.path.join(out, "cover.json")))
        assert cover["cubes"]
        assert all("dist_to_complement" in c for c in cover["cubes"])
        report = json.load(open(os.path.join(out, "whitney_report.json")))
        assert report["coverage_exact"]


class TestMaximalCommand:
    def test_outputs(self, atom_file, tmp_path):
        out = str(tmp_path / "mout")
        code = cli.main(["--out-dir", out, "maximal", "--input", atom_file])
        assert code == 0
        assert os.path.exists(os.path.join(out, "grand_maximal.json"))
        assert os.path.exists(os.path.join(out, "hl_maximal.json"))
        rep = json.load(open(os.path.join(out, "maximal_report.json")))
        assert rep["passed"]


class TestOperatorCommand:
    def test_identity_check(self, atom_file, tmp_path):
        out = str(tmp_path / "oout")
        code = cli.main(
            ["--out-dir", out, "operator-check", "--op", "identity", "--input", atom_file,
             "--samples", "20"]
        )
        assert code == 0
        rep = json.load(open(os.path.join(out, "operator_report.json")))
        assert rep["bmo_ok"] and rep["consistency"]["ok"]

    def test_hilbert_check(self, atom_file, tmp_path):
        out = str(tmp_path / "hout")
        code = cli.main(
            ["--out-dir", out, "operator-check", "--op", "hilbert", "--input", atom_file,
             "--samples", "10"]
        )
        assert code == 0


class TestMeyerCommand:
    def test_deterministic_csv(self, tmp_path):
        out1, out2 = str(tmp_path / "m1"), str(tmp_path / "m2")
        for out in (out1, out2):
            code = cli.main(["--out-dir", out, "--seed", "3", "meyer", "--jmax", "1", "--cells", "256"])
            assert code == 0
        b1 = open(os.path.join(out1, "meyer.csv"), "rb").read()
        b2 = open(os.path.join(out2, "meyer.csv"), "rb").read()
        assert b1 == b2
        header = b1.decode().splitlines()[1]
        assert header == "j,rho_inf_step,rho_inf_mollified,rho_2_step"


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "hardygrid.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "decompose" in proc.stdout

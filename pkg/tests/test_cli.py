import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from contacthj.cli import EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_OK, main
from contacthj.io import RunWriter, format_number, grid_from_csv
from contacthj.lagrangian import DomainDescriptor
from contacthj.lax_oleinik import GridFunction

SOLVER = """
[solver]
seed = 11
resolution = 8
curve_segments = 8
substeps = 2
random_starts = 0
"""

DISCOUNTED = """
[model]
family = "discounted"
lambda = 1.0
potential = [[1, 1.0, 0.0]]
""" + SOLVER

NONLINEAR = """
[model]
family = "nonlinear_concave"
lambda = 1.0
eps = 0.5
potential = [[1, 1.0, 0.0]]
""" + SOLVER


def write_config(tmp_path, body, experiment="", name="run.toml"):
    path = tmp_path / name
    path.write_text(f'output = "{tmp_path / "out"}"\n' + body + "\n[experiment]\n" + experiment)
    return str(path)


def manifest_ok(root):
    manifest = json.loads((root / "manifest.json").read_text())
    listed = {f["path"]: f["sha256"] for f in manifest["files"]}
    on_disk = {p.relative_to(root).as_posix() for p in root.rglob("*.csv")}
    assert on_disk <= set(listed)
    for rel, digest in listed.items():
        assert hashlib.sha256((root / rel).read_bytes()).hexdigest() == digest
    return manifest


def test_format_number():
    assert format_number(0.0) == "0"
    assert format_number(-0.0) == "0"
    assert format_number(3) == "3"
    assert format_number(0.1) == "0.1"
    assert format_number(1 / 3) == "0.333333333333"
    assert format_number(1e-20) == "1e-20"
    assert format_number(np.float64(2.5)) == "2.5"
    assert format_number(float("nan")) == "nan"


def test_grid_round_trip(tmp_path):
    dom = DomainDescriptor()
    g = GridFunction.from_function(dom, 8, lambda x: np.sin(x[:, 0]))
    w = RunWriter(tmp_path)
    path = w.write_grid("g.csv", g)
    back = grid_from_csv(path, dom)
    np.testing.assert_allclose(back.values, g.values, rtol=1e-11)


def test_check_conditions_pass(tmp_path, capsys):
    cfg = write_config(tmp_path, DISCOUNTED)
    assert main(["check-conditions", "--config", cfg, "--samples", "200"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["declared_pass"] is True


def test_negative_tolerance_names_key(tmp_path, capsys):
    cfg = write_config(tmp_path, DISCOUNTED.replace("substeps = 2", "substeps = 2\nfp_tol = -1.0"))
    assert main(["solve-stationary", "--config", cfg]) == EXIT_CONFIG
    assert "fp_tol" in capsys.readouterr().err


def test_missing_seed_is_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, DISCOUNTED.replace("seed = 11\n", ""))
    assert main(["solve-evolution", "--config", cfg]) == EXIT_CONFIG
    assert "seed" in capsys.readouterr().err
    assert main(["solve-evolution", "--config", cfg, "--seed", "3"]) == EXIT_OK


def test_nonconvergence_writes_diagnostics(tmp_path, capsys):
    body = NONLINEAR.replace("substeps = 2", "substeps = 2\nmax_fp_iter = 1")
    cfg = write_config(tmp_path, body)
    assert main(["solve-stationary", "--config", cfg]) == EXIT_NONCONVERGENCE
    diag = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
    assert diag["error"] == "FixedPointError"
    assert json.loads(capsys.readouterr().err) == diag


def test_solve_evolution_outputs(tmp_path):
    cfg = write_config(tmp_path, DISCOUNTED, "T = 0.5\nsteps = 2\ninitial = [[1, 1.0, 0.0]]\n")
    assert main(["solve-evolution", "--config", cfg]) == EXIT_OK
    root = tmp_path / "out"
    manifest = manifest_ok(root)
    assert manifest["times"] == [0, 0.25, 0.5]
    assert sorted(p.name for p in (root / "frames").iterdir()) == ["frame_000.csv", "frame_001.csv", "frame_002.csv"]


def test_compare_formulas_nonlinear(tmp_path):
    cfg = write_config(tmp_path, NONLINEAR.replace("curve_segments = 8", "curve_segments = 16")
                       .replace("substeps = 2", "substeps = 4"), "initial = [[1, 1.0, 0.0]]\n")
    assert main(["compare-formulas", "--config", cfg, "--points", "4"]) == EXIT_OK
    root = tmp_path / "out"
    manifest_ok(root)
    with open(root / "tables" / "formulas.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["formula_id"] for r in rows} >= {"I", "II", "III", "VI", "VII"}
    for r in rows:
        budget = 1e-4 if r["formula_id"] == "III" else 1e-5 * (1 + abs(float(r["value"])))
        assert float(r["discrepancy"]) < budget, r


def test_compare_formulas_explicit_points(tmp_path):
    cfg = write_config(tmp_path, DISCOUNTED, "initial = [[1, 1.0, 0.0]]\n")
    assert main(["compare-formulas", "--config", cfg, "--points", "0.5:0.25;0.3:0.7"]) == EXIT_OK
    assert main(["compare-formulas", "--config", cfg, "--points", "0.5"]) == EXIT_CONFIG


def test_fundamental_solution_json(tmp_path, capsys):
    cfg = write_config(tmp_path, DISCOUNTED)
    traj = tmp_path / "traj.csv"
    argv = ["fundamental-solution", "--config", cfg, "--t1", "0", "--t2", "1", "--x", "0.1", "--y", "0.4",
            "--json", "--dump-trajectory", str(traj)]
    assert main(argv) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert np.isfinite(doc["value"])
    assert traj.read_text().splitlines()[0] == "s,x0,v0,u"
    assert main(argv[:5] + ["--t2", "0"] + argv[7:]) == EXIT_CONFIG


def test_fd_solve_and_study(tmp_path):
    cfg = write_config(tmp_path, DISCOUNTED,
                       "T = 0.25\ninitial = [[1, 1.0, 0.0]]\nstudy = \"semigroup\"\nladder = [4, 8, 16]\n")
    assert main(["fd-solve", "--config", cfg, "--out", str(tmp_path / "fd")]) == EXIT_OK
    manifest_ok(tmp_path / "fd")
    assert main(["convergence-study", "--config", cfg, "--out", str(tmp_path / "cs")]) == EXIT_OK
    manifest = manifest_ok(tmp_path / "cs")
    assert np.isfinite(manifest["slope"])


def test_constant_data_study_slope(tmp_path):
    cfg = write_config(tmp_path, DISCOUNTED.replace("potential = [[1, 1.0, 0.0]]", "potential = []"),
                       "T = 1.0\ninitial_constant = 1.0\nstudy = \"constant_data\"\nladder = [2, 4, 8]\n")
    assert main(["convergence-study", "--config", cfg]) == EXIT_OK
    slope = json.loads((tmp_path / "out" / "manifest.json").read_text())["slope"]
    assert slope == pytest.approx(4.0, abs=0.3)


def test_bad_study_name(tmp_path, capsys):
    cfg = write_config(tmp_path, DISCOUNTED, "study = \"nope\"\nladder = [4, 8, 16]\n")
    assert main(["convergence-study", "--config", cfg]) == EXIT_CONFIG
    assert "experiment.study" in capsys.readouterr().err


def test_deterministic_bytes(tmp_path):
    cfg = write_config(tmp_path, NONLINEAR, "T = 0.5\nsteps = 2\ninitial = [[1, 1.0, 0.0]]\n")
    for name in ("a", "b"):
        assert main(["solve-evolution", "--config", cfg, "--out", str(tmp_path / name)]) == EXIT_OK
    for p in (tmp_path / "a").rglob("*.csv"):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, DISCOUNTED)
    proc = subprocess.run([sys.executable, "-m", "contacthj", "check-conditions", "--config", cfg,
                           "--samples", "50"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr

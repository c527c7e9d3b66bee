import json
import shutil
import subprocess

import numpy as np
import pytest

from torlab.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, ExperimentConfig, main
from torlab.errors import ConfigurationError


def _run(tmp_path, command, cfg, name="run", extra=()):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    return main([command, "--config", str(path), "--out", str(out), *extra]), out


def _header(text):
    return text.splitlines()[0]


def test_solve_torsion_disk(tmp_path):
    code, out = _run(tmp_path, "solve-torsion", {"sphere_resolution": 128, "cartesian_resolution": 64,
                                                 "dump_u": True})
    assert code == EXIT_OK
    s = json.loads((out / "torsion_summary.json").read_text())
    assert s["T_tilde_normal"] == pytest.approx(np.pi / 8, rel=1e-2)
    assert s["pohozaev_relative_gap"] < 2e-2
    assert s["config"]["sphere_resolution"] == 128
    assert (out / "u.vtk").exists()


def test_solve_torsion_ellipse(tmp_path):
    code, out = _run(tmp_path, "solve-torsion", {"sphere_resolution": 128, "cartesian_resolution": 96,
                                                 "body": {"kind": "ellipsoid", "axes": [2.0, 1.0]}})
    assert code == EXIT_OK
    s = json.loads((out / "torsion_summary.json").read_text())
    assert s["T_tilde_normal"] == pytest.approx(2 * np.pi / 5, rel=1e-2)


def test_unsupported_pair_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "solve-torsion", {"n": 3, "k": 3, "sigma_convention": "mean"})
    assert code == EXIT_CONFIG
    assert "k must satisfy 1≤k≤n−1" in capsys.readouterr().err


def test_bad_json_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "n": 2,\n  "k": \n}')
    assert main(["measure", "--config", str(path)]) == EXIT_CONFIG
    assert "line 4" in capsys.readouterr().err


@pytest.mark.parametrize("cfg,field", [
    ({"bogus": 1}, "bogus"),
    ({"n": 4}, "'n'"),
    ({"n": 3, "k": 2}, "sigma_convention"),
    ({"f": {"fourier": {"a0": 1.0}}, "n": 3, "sigma_convention": "mean"}, "f.fourier"),
    ({"flow": {"speed": 1}}, "flow"),
])
def test_field_diagnostics(cfg, field):
    with pytest.raises(ConfigurationError, match=field):
        ExperimentConfig.from_dict(cfg, "measure")


def test_flow_initial_only(tmp_path):
    cfg = {"sphere_resolution": 32, "cartesian_resolution": 40,
           "body": {"kind": "ellipsoid", "axes": [1.2, 0.8]}, "flow": {"t_max": 0}}
    code, out = _run(tmp_path, "flow", cfg)
    assert code == EXIT_OK
    s = json.loads((out / "flow_summary.json").read_text())
    assert s["status"] == "initial-only" and s["steps"] == 0
    lines = (out / "flow.csv").read_text().splitlines()
    assert len(lines) == 3


def test_flow_not_converged_and_svg(tmp_path):
    cfg = {"sphere_resolution": 32, "cartesian_resolution": 40,
           "body": {"kind": "ellipsoid", "axes": [1.2, 0.8]},
           "f": {"fourier": {"a0": 1.0, "cos": [0.2], "sin": [0.0, 0.1]}}, "flow": {"t_max": 0.1}}
    code, out = _run(tmp_path, "flow", cfg)
    assert code == EXIT_NOT_CONVERGED
    svg = (out / "flow.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") >= 3
    assert "config: " in svg
    body = json.loads((out / "final_body.json").read_text())
    assert "config" in body


def test_flow_converges(tmp_path):
    cfg = {"sphere_resolution": 32, "cartesian_resolution": 40,
           "body": {"kind": "ellipsoid", "axes": [1.1, 0.9]}, "flow": {"tol": 1e-2, "t_max": 10}}
    code, out = _run(tmp_path, "flow", cfg)
    assert code == EXIT_OK
    s = json.loads((out / "flow_summary.json").read_text())
    assert s["status"] == "converged"
    assert s["phi_radius"] == pytest.approx(np.exp(np.mean(np.log(
        np.sqrt(1.21 * np.cos(2 * np.pi * np.arange(32) / 32) ** 2
                + 0.81 * np.sin(2 * np.pi * np.arange(32) / 32) ** 2)))), rel=1e-3)
    assert s["tau"] == pytest.approx(1 / s["eta"])


def test_measure_hemispheres_and_atoms(tmp_path):
    code, out = _run(tmp_path, "measure", {"sphere_resolution": 128, "cartesian_resolution": 48,
                                           "partition": {"kind": "caps", "caps": [
                                               {"center": [1, 0], "angle": 1.5707963}]}})
    assert code == EXIT_OK
    s = json.loads((out / "measure_summary.json").read_text())
    assert s["total"] == pytest.approx(np.pi / 6, rel=1e-2)
    code, out = _run(tmp_path, "measure", {"sphere_resolution": 128, "cartesian_resolution": 64,
                                           "body": {"kind": "square"},
                                           "partition": {"kind": "facets", "normals": [[1, 0], [0, 1],
                                                                                       [-1, 0], [0, -1]]}},
                     name="square")
    assert code == EXIT_OK
    s = json.loads((out / "measure_summary.json").read_text())
    masses = [a["mass"] for a in s["atoms"]]
    assert max(masses) - min(masses) < 5e-3 * np.mean(masses)
    assert sum(masses) == pytest.approx(s["Q"], rel=1e-3)


def test_measure_p_equals_n_partition_rejected(tmp_path):
    code, _ = _run(tmp_path, "measure", {"p": 2, "partition": {"kind": "hemispheres"}})
    assert code == EXIT_CONFIG


def test_variation_audit(tmp_path):
    cfg = {"sphere_resolution": 64, "cartesian_resolution": 48,
           "audits": [{"kind": "hull-rigidity", "pert": 1.0}, {"kind": "scaling-Q"}, {"kind": "wulff-measure"}]}
    code, out = _run(tmp_path, "variation-audit", cfg)
    assert code == EXIT_OK
    rows = (out / "audits.csv").read_text().splitlines()
    assert rows[0].startswith("# config: ") and len(rows) == 5
    summary = (out / "audits_summary.txt").read_text()
    assert "hull-rigidity" in summary and "wulff-measure" in summary


def test_crofton_audit(tmp_path):
    cfg = {"n": 3, "k": 2, "sigma_convention": "elementary", "sphere_resolution": [16, 32],
           "random_bodies": 2}
    code, out = _run(tmp_path, "crofton-audit", cfg)
    assert code == EXIT_OK
    rows = [r.split(",") for r in (out / "crofton.csv").read_text().splitlines()[2:]]
    assert len(rows) == 6
    ball = {r[1]: float(r[4]) for r in rows if r[0] == "body"}
    assert ball["elementary"] == pytest.approx(2.0, rel=1e-6)
    assert ball["mean"] == pytest.approx(1.0, rel=1e-6)


def test_determinism_and_seed(tmp_path):
    cfg = {"n": 2, "sphere_resolution": 64, "random_bodies": 3}
    _, a = _run(tmp_path, "crofton-audit", cfg, "a", ("--seed", "7"))
    _, b = _run(tmp_path, "crofton-audit", cfg, "b", ("--seed", "7"))
    _, c = _run(tmp_path, "crofton-audit", cfg, "c", ("--seed", "8"))
    ta, tb, tc = ((d / "crofton.csv").read_bytes() for d in (a, b, c))
    assert ta == tb
    assert ta != tc
    assert b'"seed": 7' in ta.splitlines()[0]


def test_every_output_has_header(tmp_path):
    code, out = _run(tmp_path, "measure", {"sphere_resolution": 64, "cartesian_resolution": 32,
                                           "partition": {"kind": "hemispheres"}})
    assert code == EXIT_OK
    assert _header((out / "measure.csv").read_text()).startswith("# config: {")
    assert json.loads((out / "measure_summary.json").read_text())["config"]["command"] == "measure"


@pytest.mark.skipif(shutil.which("torlab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"n": 3, "k": 3}))
    proc = subprocess.run(["torlab", "solve-torsion", "--config", str(path)], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert "k must satisfy" in proc.stderr

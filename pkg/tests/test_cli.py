from __future__ import annotations

import json
import math

import pytest

from hgiso.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_mul_and_dist(capsys):
    code, out = _run(capsys, "mul", "1,0,0", "0,1,0")
    assert code == 0 and json.loads(out)["product"] == [1.0, 1.0, -2.0]
    code, out = _run(capsys, "dist", "0,0,0", "0,0,1")
    assert code == 0 and json.loads(out)["distance"] == pytest.approx(math.sqrt(math.pi))


def test_geodesic_writes_csv(capsys, tmp_path):
    code, out = _run(capsys, "--out-dir", str(tmp_path), "geodesic", "0,0,0", "1,0,1", "--n", "11")
    doc = json.loads(out)
    assert code == 0 and doc["length"] == pytest.approx(doc["distance"])
    assert (tmp_path / "geodesic.csv").read_text().startswith("s,x,y,t")
    assert json.loads((tmp_path / "geodesic.json").read_text()) == doc


def test_measure_body_argument(capsys):
    code, out = _run(capsys, "measure", "--body", '{"family": "euclidean_ball", "params": {"R": 1}}', "--n", "1024")
    assert code == 0 and json.loads(out)["volume"] == pytest.approx(4 * math.pi / 3, rel=1e-5)


def test_checks_drive_exit_code(capsys, tmp_path):
    ball = '{"family": "euclidean_ball"}'
    code, out = _run(capsys, "curvature", "--body", ball, "--spacing", "0.01", "--order", "2")
    assert code == 1 and json.loads(out)["pass"] is False
    code, _ = _run(capsys, "--no-check", "curvature", "--body", ball, "--spacing", "0.01", "--order", "2")
    assert code == 0
    code, out = _run(capsys, "--out-dir", str(tmp_path), "curvature", "--H", "2")
    assert code == 0 and json.loads(out)["linf"] <= 1e-5
    assert (tmp_path / "curvature_residual.csv").exists()


def test_experiment_commands(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_bumps": 3, "quadrature_n": 2048}))
    for cmd in (["flow"], ["variation"], ["sigma"], ["reconstruct", "--n-geodesics", "4"]):
        code, out = _run(capsys, "--config", str(cfg), *cmd)
        assert code == 0, cmd
    coarse = tmp_path / "coarse.json"
    coarse.write_text(json.dumps({"lift_samples": 20001}))
    code, out = _run(capsys, "--config", str(coarse), "reconstruct", "--n-geodesics", "4")
    assert code == 1 and json.loads(out)["max_deviation"] > 1e-8
    code, out = _run(capsys, "--config", str(cfg), "--out-dir", str(tmp_path), "--threads", "2", "compare")
    assert code == 0 and out.startswith("tag,P,V,I")
    assert json.loads((tmp_path / "compare.json").read_text())["bubble_minimal"]


def test_errors_exit_2(capsys):
    assert main(["dist", "1,2", "0,0,0"]) == 2
    assert main(["measure", "--body", '{"family": "torus"}']) == 2
    with pytest.raises(SystemExit):
        main(["bogus"])

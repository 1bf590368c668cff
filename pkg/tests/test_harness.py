from __future__ import annotations

import json
import math

import numpy as np
import pytest

from hgiso.bodies import make_bubble, make_candidate
from hgiso.harness import (
    Bump,
    ExperimentConfig,
    compare_candidates,
    first_variation,
    radial_probe_bumps,
    random_bumps,
    reconstruct_bubble,
    uniqueness_probe,
    worst_bump,
    write_comparison,
)
from hgiso.measure import measure_body


@pytest.fixture(scope="module")
def bubble():
    return make_bubble()


@pytest.fixture(scope="module")
def bubble_measures(bubble):
    return measure_body(bubble, 4096)


def test_bump_shape():
    b = Bump(0.3, -0.2, 0.1, 2.5)
    val, (gx, gy) = b.value_and_grad(np.array([0.3, 0.45, 0.35]), np.array([-0.2, -0.2, -0.2]))
    assert val[0] == pytest.approx(2.5) and val[1] == 0.0
    h = 1e-6
    fd = (b.value_and_grad(0.35 + h, -0.2)[0] - b.value_and_grad(0.35 - h, -0.2)[0]) / (2 * h)
    assert gx[2] == pytest.approx(fd, rel=1e-6)
    assert b.sup_norm == 2.5
    with pytest.raises(ValueError):
        Bump(0, 0, 0.0)


def test_bubble_is_critical(bubble, bubble_measures):
    for bump in random_bumps(bubble, 10, seed=3):
        rep = first_variation(bubble, bump, measures=bubble_measures)
        assert abs(rep.fd_derivative) <= 1e-4 * bump.sup_norm
        assert abs(rep.analytic_form) <= 1e-6
        assert rep.agreement <= 10 * rep.fd_truncation


def test_zero_bump_gives_exact_zero(bubble, bubble_measures):
    rep = first_variation(bubble, Bump(0.5, 0.0, 0.1, 0.0), measures=bubble_measures)
    assert rep.fd_derivative == 0.0 and rep.analytic_form == 0.0


def test_ball_is_not_critical():
    ball = make_candidate("euclidean_ball", {"R": 1.0})
    rep = worst_bump(ball, radial_probe_bumps(ball))
    assert abs(rep.analytic_form) > 10 * 1e-6
    # the two routes agree on a non-critical body too
    assert rep.agreement <= 10 * rep.fd_truncation + 1e-9


def test_bump_support_errors(bubble, bubble_measures):
    with pytest.raises(ValueError, match="characteristic"):
        first_variation(bubble, Bump(0.05, 0.0, 0.05), measures=bubble_measures)
    with pytest.raises(ValueError, match="domain"):
        first_variation(bubble, Bump(0.95, 0.0, 0.1), measures=bubble_measures)


def test_compare_candidates_bubble_minimal(tmp_path):
    cfg = ExperimentConfig(threads=2)
    result = compare_candidates(cfg)
    assert result.rows[0].tag == "bubble"
    assert result.bubble_minimal
    assert all(r.I_relative_to_bubble > 1 for r in result.rows[1:])
    csv_path, json_path = write_comparison(result, tmp_path)
    doc = json.loads(json_path.read_text())
    assert doc["bubble_minimal"] and len(doc["rows"]) == 5
    assert csv_path.read_text().splitlines()[0].startswith("tag,P,V,I")


def test_compare_is_deterministic_and_dilation_invariant():
    cands = ({"family": "bubble", "params": {"scale": 0.5}}, {"family": "bubble", "params": {"scale": 2.0}},
             {"family": "euclidean_ball", "params": {"R": 1.0}}, {"family": "euclidean_ball", "params": {"R": 1.0}})
    one = compare_candidates(ExperimentConfig(candidates=cands, threads=1))
    two = compare_candidates(ExperimentConfig(candidates=cands, threads=3))
    assert one.rows == two.rows
    ref = one.rows[0].I
    assert abs(one.rows[1].I - ref) < 1e-5 and abs(one.rows[2].I - ref) < 1e-5
    assert one.rows[3] == one.rows[4]


def test_compare_rejects_bad_candidates():
    with pytest.raises(ValueError, match="rejected: unknown candidate family"):
        compare_candidates(ExperimentConfig(candidates=({"family": "torus"},)))
    nonconvex = {"grid": {"domain": [-1, 1, -1, 1], "f": [[0, 0, 0], [0, 1, 0], [0, 0, 0]],
                          "g": [[2, 2, 2], [2, 2, 2], [2, 2, 2]]}}
    with pytest.raises(ValueError, match="rejected"):
        compare_candidates(ExperimentConfig(candidates=(nonconvex,)))


def test_reconstruction_matches_bubble():
    rep = reconstruct_bubble(2.0, 64)
    assert rep.max_deviation <= 1e-8
    assert rep.max_profile_residual <= 1e-8
    assert rep.north_pole == pytest.approx(math.pi / 2, abs=1e-8)
    # rotational symmetry: every geodesic traces the same (|z|, t) profile
    prof = np.stack([np.hypot(rep.surface[:, :, 0], rep.surface[:, :, 1]), rep.surface[:, :, 2]], axis=-1)
    assert np.max(np.abs(prof - prof[0])) < 1e-12


def test_reconstruction_scaling_and_convergence():
    rep = reconstruct_bubble(1.0, 4, 20001)
    assert rep.south_pole == pytest.approx(-2 * math.pi)
    assert rep.north_pole == pytest.approx(2 * math.pi, abs=1e-6)
    coarse = reconstruct_bubble(2.0, 4, 1001).max_deviation
    fine = reconstruct_bubble(2.0, 4, 2001).max_deviation
    assert coarse / fine == pytest.approx(4.0, rel=0.05)
    with pytest.raises(ValueError):
        reconstruct_bubble(0.0, 4)


def test_uniqueness_probe(bubble):
    for z in [(0.9, 0.0), (0.1, 0.05)]:
        rep = uniqueness_probe(bubble, z, H=2.0)
        assert rep.count == 1
        # the surviving direction is the flow direction v/|v|
        x, y = z
        fx, fy = bubble.bottom.gradient(np.array([x]), np.array([y]))
        v = np.array([2 * x + fy[0], 2 * y - fx[0]])
        ang = rep.staying_directions[0]
        assert np.allclose([math.cos(ang), math.sin(ang)], v / np.linalg.norm(v), atol=1e-5)
    ball = make_candidate("euclidean_ball", {"R": 1.0})
    assert uniqueness_probe(ball, (0.5, 0.2)).count == 0


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(quadrature_n=8)
    with pytest.raises(ValueError):
        ExperimentConfig(tolerances={"reconstruction": 0.0})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"quadrature_n": 1024, "threads": 2}))
    cfg = ExperimentConfig.from_file(path)
    assert cfg.quadrature_n == 1024 and cfg.tolerances["reconstruction"] == 1e-8
    assert cfg.load_body().tag == "bubble"

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from hgiso.bodies import ConvexBody, Disk, GraphChart, Rect, make_bubble, make_candidate
from hgiso.measure import (
    MeasureReport,
    curvature_H,
    iso_ratio,
    lateral_wall_area,
    measure_body,
    minkowski_content,
    perimeter,
    perimeter_graph_xy,
    perimeter_graph_yt,
    solid_angle_audit,
    volume,
    volume_with_error,
)

PI2 = math.pi**2

# Oracles computed with adaptive quadrature on the untransformed integrands,
# independent of the sine-substituted midpoint rule used by the package.
BUBBLE_VOLUME_ORACLE = 4 * math.pi * quad(lambda r: r * (math.acos(r) + r * math.sqrt(1 - r * r)), 0, 1, epsabs=1e-14)[0]
BUBBLE_BOTTOM_PERIMETER_ORACLE = 2 * math.pi * quad(lambda r: r * 2 * r / math.sqrt(1 - r * r), 0, 1, epsabs=1e-14)[0]


def test_oracles_agree_with_closed_forms():
    assert abs(BUBBLE_VOLUME_ORACLE - 3 * PI2 / 4) < 1e-10
    assert abs(BUBBLE_BOTTOM_PERIMETER_ORACLE - PI2) < 1e-8


def test_bubble_volume_and_perimeter():
    body = make_bubble()
    assert abs(volume(body, 4096) - BUBBLE_VOLUME_ORACLE) < 1e-6
    assert abs(perimeter_graph_xy(body.bottom, body.domain, 4096) - PI2) < 1e-6
    assert abs(perimeter(body, 4096) - 2 * PI2) < 1e-5
    assert abs(curvature_H(body, 4096) - 2.0) < 1e-5
    assert abs(iso_ratio(body, 4096) - (2 * PI2) ** (4 / 3) / (3 * PI2 / 4)) < 1e-5


def test_simple_bodies():
    box = make_candidate("box")
    assert abs(volume(box, 64) - 8.0) < 1e-12
    cyl = make_candidate("cylinder", {"R": 1.0, "a": 1.0})
    assert abs(volume(cyl, 4096) - 2 * math.pi) < 1e-6
    # wall: circumference times height; faces: 2 int_D 2|z| = 2 * 4 pi / 3
    assert abs(lateral_wall_area(cyl) - 4 * math.pi) < 1e-9
    assert abs(perimeter(cyl, 4096) - (4 * math.pi + 8 * math.pi / 3)) < 1e-5
    flat = GraphChart(lambda x, y: np.zeros_like(x))
    assert abs(perimeter_graph_xy(flat, Disk(1.0), 1024) - 4 * math.pi / 3) < 1e-5


def test_scaling_laws():
    base = measure_body(make_bubble(1.0), 4096)
    for lam in (0.5, 2.0):
        scaled = measure_body(make_bubble(lam), 4096)
        assert abs(scaled.volume - lam**4 * base.volume) < 1e-5 * lam**4
        assert abs(scaled.perimeter - lam**3 * base.perimeter) < 1e-4 * lam**3
        assert abs(scaled.iso_ratio - base.iso_ratio) < 1e-5
        assert abs(scaled.curvature_H - base.curvature_H / lam) < 1e-5
    ball = measure_body(make_candidate("euclidean_ball", {"R": 1.0}), 2048)
    # the Euclidean ball is not a dilate of itself under (lam z, lam^2 t): only the bubble family is checked above
    assert ball.volume > 0 and ball.perimeter > 0


def test_yt_chart_matches_xy_chart():
    bubble = make_bubble()
    for band in (0.5, 1.0):
        # xy route: half of each annulus of radii [r_T, 1] on both charts, where rho(r_T) = T
        r_t = float(bubble.profile.inverse(band))
        xy = 2 * math.pi * quad(lambda r: r * 2 * r / math.sqrt(1 - r * r), r_t, 1, epsabs=1e-13)[0]
        assert abs(perimeter_graph_yt(bubble.left, 1024, (-band, band)) - xy) < 1e-5
    cyl = make_candidate("cylinder", {"R": 1.5, "a": 0.7})
    half_wall = 0.5 * lateral_wall_area(cyl)
    assert abs(perimeter_graph_yt(cyl.left, 1024) - half_wall) < 1e-5
    box = make_candidate("box")
    assert abs(perimeter_graph_yt(box.left, 2048) - 4.0) < 1e-6  # plane h = const: area of E
    with pytest.raises(ValueError):
        perimeter_graph_yt(bubble.left, 64, (-3.0, 0.0))


def test_box_perimeter_self_convergence():
    box = make_candidate("box")
    vals = [perimeter(box, n) for n in (64, 128, 256, 512)]
    ratios = [(a - b) / (b - c) for a, b, c in zip(vals, vals[1:], vals[2:])]
    assert all(3.5 < q < 4.5 for q in ratios)
    bubble = make_bubble()
    vols = [volume(bubble, n) for n in (256, 512, 1024)]
    assert 3.5 < (vols[0] - vols[1]) / (vols[1] - vols[2]) < 4.5


def test_isoperimetric_direction():
    bubble_ratio = iso_ratio(make_bubble(), 2048)
    for fam, par in [("euclidean_ball", {"R": 1.0}), ("cylinder", {}), ("box", {}), ("cone", {}),
                     ("euclidean_ball", {"R": 3.0}), ("cylinder", {"R": 0.5, "a": 2.0})]:
        assert iso_ratio(make_candidate(fam, par), 2048) > bubble_ratio


def test_solid_angle_audit():
    for fam in ("bubble", "euclidean_ball", "cylinder", "box", "cone"):
        assert abs(solid_angle_audit(make_candidate(fam)) - 1.0) < 1e-3
    cyl = make_candidate("cylinder")
    # a top chart that sags onto the bottom leaves the wall region uncovered
    open_top = ConvexBody("custom", cyl.domain, cyl.bottom,
                          GraphChart(lambda x, y: np.full_like(x, 0.5)), None, None, {})
    assert abs(solid_angle_audit(open_top) - 1.0) < 1e-3  # walls still close it
    leaky = ConvexBody("custom", Rect(-1, 1, -1, 1), make_candidate("box").bottom,
                       GraphChart(lambda x, y: np.where(x > 0.5, -1.0, 1.0)), None, None, {})
    with pytest.raises(ValueError):
        perimeter(leaky, 64)


def test_measure_report_json():
    rep = measure_body(make_bubble(), 1024)
    doc = json.loads(rep.to_json())
    assert set(doc) >= {"volume", "perimeter", "iso_ratio", "curvature_H", "quadrature_resolution", "estimated_error"}
    assert rep.curvature_H == 3 * rep.perimeter / (4 * rep.volume)
    assert isinstance(rep, MeasureReport) and rep.estimated_error > 0
    v, dv = volume_with_error(make_bubble(), 4096)
    assert abs(v - 3 * PI2 / 4) < 3 * dv + 1e-12
    with pytest.raises(ValueError):
        volume(make_bubble(), 8)


def test_minkowski_content_bubble():
    est, se = minkowski_content(make_bubble(), 0.02, 200_000, seed=1)
    assert 0 < se < 0.02 * est
    assert abs(est / (2 * PI2) - 1) < 0.05


def test_minkowski_content_ball():
    ball = make_candidate("euclidean_ball", {"R": 1.0})
    est, _ = minkowski_content(ball, 0.01, 400_000, seed=2)
    assert abs(est / perimeter(ball, 2048) - 1) < 0.05


def test_minkowski_content_refinement():
    body = make_bubble()
    eps = 0.02
    a, sa = minkowski_content(body, eps, 200_000, seed=3)
    b, sb = minkowski_content(body, eps / 2, 200_000, seed=4)
    assert abs(a - b) <= 3 * math.hypot(sa, sb) + 5 * eps * 2 * PI2


def test_minkowski_content_errors():
    with pytest.raises(ValueError):
        minkowski_content(make_bubble(), 0.0)
    with pytest.raises(ValueError):
        minkowski_content(make_candidate("box"), 0.01)
    with pytest.raises(ValueError):
        minkowski_content(make_bubble(), 0.5)

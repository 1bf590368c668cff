from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgiso.core import (
    ORIGIN,
    HPoint,
    SampledCurve,
    dilate,
    group_inv,
    group_mul,
    horizontal_lift,
    hplane_height,
    is_horizontal,
    sr_length,
    translate_curve,
)

coord = st.floats(-10, 10, allow_nan=False)
points = st.builds(HPoint, coord, coord, coord)


def close(p: HPoint, q: HPoint, tol: float) -> bool:
    return np.max(np.abs(p.as_array() - q.as_array())) <= tol


def generator_plane_curve(n: int) -> SampledCurve:
    s = np.linspace(-math.pi, math.pi, n)
    xy = np.column_stack([0.5 * (1 + np.cos(s)), -0.5 * np.sin(s)])
    return SampledCurve(xy, s0=-math.pi, ds=s[1] - s[0])


def test_group_examples():
    assert group_mul(ORIGIN, HPoint(1, 2, 3)) == HPoint(1, 2, 3)
    assert group_mul(HPoint(1, 0, 0), HPoint(0, 1, 0)) == HPoint(1, 1, -2)
    assert group_inv(HPoint(1, 2, 3)) == HPoint(-1, -2, -3)
    assert group_inv(HPoint(0, 0, 5)) == HPoint(0, 0, -5)


def test_hpoint_rejects_nonfinite():
    with pytest.raises(ValueError):
        HPoint(math.nan, 0, 0)
    with pytest.raises(ValueError):
        HPoint(0, math.inf, 0)


def test_hpoint_parse():
    assert HPoint.parse("1, -2.5,3") == HPoint(1, -2.5, 3)
    with pytest.raises(ValueError):
        HPoint.parse("1,2")


@settings(max_examples=200)
@given(points, points, points)
def test_group_axioms(p, q, r):
    lhs = group_mul(group_mul(p, q), r)
    rhs = group_mul(p, group_mul(q, r))
    scale = 1 + max(abs(v) for v in lhs.as_array())
    assert close(lhs, rhs, 1e-12 * scale * 100)
    assert close(group_mul(p, ORIGIN), p, 0) and close(group_mul(ORIGIN, p), p, 0)
    assert close(group_mul(p, group_inv(p)), ORIGIN, 1e-12)
    assert close(group_mul(group_inv(p), p), ORIGIN, 1e-12)


@settings(max_examples=100)
@given(points, points, st.floats(0.1, 5))
def test_dilation_is_group_homomorphism(p, q, lam):
    lhs = dilate(lam, group_mul(p, q))
    rhs = group_mul(dilate(lam, p), dilate(lam, q))
    assert close(lhs, rhs, 1e-10 * (1 + abs(lhs.t)))


def test_dilate_examples():
    p = HPoint(0.3, -1.2, 2.0)
    assert dilate(1.0, p) == p
    assert dilate(2.0, HPoint(1, 1, 1)) == HPoint(2, 2, 4)
    assert close(dilate(1 / 3, dilate(3.0, p)), p, 1e-12)
    assert close(dilate(0.5, dilate(4.0, p)), dilate(2.0, p), 1e-12)
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            dilate(bad, p)


def test_hplane_height():
    assert hplane_height(ORIGIN, (3.0, -2.0)) == 0.0
    assert hplane_height(HPoint(1, 0, 0), (0, 1)) == -2.0
    p = HPoint(0.7, -0.4, 1.5)
    # the plane is affine in the offset: heights at z' and -z' average to p.t
    for zp in [(1.0, 2.0), (-0.3, 0.8)]:
        up = hplane_height(p, zp)
        down = hplane_height(p, (-zp[0], -zp[1]))
        assert abs(0.5 * (up + down) - p.t) < 1e-15
    # points of H_p are exactly the left translates of horizontal offsets
    zp = (0.25, -1.5)
    q = group_mul(p, HPoint(zp[0], zp[1], 0.0))
    assert abs(q.t - hplane_height(p, zp)) < 1e-15


def test_lift_of_generator_converges_second_order():
    errs = []
    for n in (1001, 2001, 4001):
        kappa = generator_plane_curve(n)
        gamma = horizontal_lift(kappa, -math.pi / 2)
        s = kappa.params
        errs.append(np.max(np.abs(gamma.points[:, 2] - 0.5 * (s + np.sin(s)))))
    assert errs[-1] < 2e-6
    for a, b in zip(errs, errs[1:]):
        assert 3.5 < a / b < 4.5


def test_lift_of_radial_segment_is_flat():
    s = np.linspace(0, 2, 50)
    kappa = SampledCurve(np.outer(s, [0.6, -0.8]), ds=s[1])
    gamma = horizontal_lift(kappa, 0.0)
    assert np.max(np.abs(gamma.points[:, 2])) < 1e-15


def test_lift_of_clockwise_circle_is_four_times_area():
    radius, n = 0.7, 4001
    s = np.linspace(0, 2 * math.pi, n)
    # clockwise circle through the origin, centre (radius, 0)
    xy = np.column_stack([radius - radius * np.cos(s), radius * np.sin(s)])
    gamma = horizontal_lift(SampledCurve(xy, ds=s[1]), 0.0)
    assert abs(gamma.points[-1, 2] - 4 * math.pi * radius**2) < 1e-5


def test_sr_length_examples():
    assert sr_length(SampledCurve([[0, 0], [1, 0]])) == 1.0
    kappa = generator_plane_curve(int(2 * math.pi / 1e-4) + 1)
    assert abs(sr_length(kappa) - math.pi) < 1e-6
    s = np.linspace(0, 2 * math.pi, 20001)
    circle = SampledCurve(np.column_stack([2 * np.cos(s), 2 * np.sin(s)]), ds=s[1])
    assert abs(sr_length(circle) - 4 * math.pi) < 1e-6


def test_lift_consistency_and_translation_invariance():
    kappa = generator_plane_curve(2001)
    gamma = horizontal_lift(kappa, -math.pi / 2)
    assert is_horizontal(gamma, 1e-12)
    bumped = SampledCurve(gamma.points + np.array([0, 0, 1e-3]) * np.linspace(0, 1, len(gamma))[:, None], ds=gamma.ds)
    assert not is_horizontal(bumped, 1e-4)
    p = HPoint(1.3, -0.2, 4.0)
    moved = translate_curve(p, gamma)
    assert abs(sr_length(moved) - sr_length(gamma)) < 1e-12
    assert is_horizontal(moved, 1e-5)


def test_sampled_curve_validation():
    with pytest.raises(ValueError):
        SampledCurve([[0, 0]])
    with pytest.raises(ValueError):
        SampledCurve([[0, 0], [1, 1]], ds=0.0)
    with pytest.raises(ValueError):
        SampledCurve([[0, 0, 0, 0], [1, 1, 1, 1]])
    with pytest.raises(ValueError):
        SampledCurve([[0, 0], [1, math.nan]])


def test_curve_round_trips(tmp_path):
    kappa = generator_plane_curve(17)
    gamma = horizontal_lift(kappa, 0.25)
    for curve in (kappa, gamma):
        path = tmp_path / f"c{curve.dim}.csv"
        curve.to_csv(path)
        back = SampledCurve.from_csv(path)
        assert back.dim == curve.dim
        np.testing.assert_array_equal(back.points, curve.points)
        assert abs(back.s0 - curve.s0) < 1e-15 and abs(back.ds - curve.ds) < 1e-14
        back = SampledCurve.from_json(curve.to_json())
        np.testing.assert_array_equal(back.points, curve.points)
        assert back.s0 == curve.s0 and back.ds == curve.ds
    assert SampledCurve.parse_csv(kappa.to_csv()).points.shape == (17, 2)
    with pytest.raises(ValueError):
        SampledCurve.parse_csv("a,b\n1,2\n")

from __future__ import annotations

import math

import numpy as np
import pytest

from hgiso.bodies import make_bubble, make_candidate
from hgiso.core import HPoint, SampledCurve
from hgiso.flow import (
    FlowTrace,
    TruncatedTraceError,
    arclength_reparam,
    chain_rule_check,
    field_v,
    fit_circle,
    flow_map,
    integrate_flow,
    integrate_flows,
    lattice_seeds,
    lift_flow,
    projected_plane_curve,
)
from hgiso.geodesics import cc_distance

# Hand-derived: at (1/2, 0) the bubble field is (1, -1/sqrt3); the clockwise circle of
# radius 1/2 tangent to it has its centre a quarter turn to the right.
SEED = (0.5, 0.0)
SEED_VELOCITY = (1.0, -1.0 / math.sqrt(3.0))
SEED_CENTER = (0.25, -math.sqrt(3.0) / 4.0)


@pytest.fixture(scope="module")
def bubble():
    return make_bubble()


@pytest.fixture(scope="module")
def fxy(bubble):
    return field_v(bubble, "bottom")


@pytest.fixture(scope="module")
def fyt(bubble):
    return field_v(bubble, "left")


def _fd_divergence(field, p, h=1e-5):
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    return (field(p + ex)[0] - field(p - ex)[0]) / (2 * h) + (field(p + ey)[1] - field(p - ey)[1]) / (2 * h)


def test_field_value_at_seed(fxy):
    assert np.allclose(fxy(np.array(SEED)), SEED_VELOCITY, atol=1e-14)


def test_field_divergences(bubble, fxy, fyt):
    rng = np.random.default_rng(1)
    for _ in range(20):
        r, a = rng.uniform(0.2, 0.8), rng.uniform(0, 2 * math.pi)
        p = np.array([r * math.cos(a), r * math.sin(a)])
        assert _fd_divergence(fxy, p) == pytest.approx(4.0, abs=1e-6)
    for y, t in [(0.3, 0.2), (-0.4, 0.5), (0.2, -0.3)]:
        p = np.array([y, t])
        _, ht = bubble.left.gradient(np.array([y]), np.array([t]))
        assert _fd_divergence(fyt, p) == pytest.approx(-4.0 * ht[0], abs=1e-5)


def test_field_rejects_sigma_and_outside(fxy, bubble):
    with pytest.raises(ValueError):
        fxy(np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        fxy(np.array([1.2, 0.0]))
    with pytest.raises(ValueError):
        field_v(bubble, "top")


def test_seed_trace_is_clockwise_circle(fxy):
    trace = integrate_flow(fxy, SEED, rho=0.3)
    fit = fit_circle(trace.samples)
    assert fit.radius == pytest.approx(0.5, abs=1e-8)
    assert np.allclose(fit.center, SEED_CENTER, atol=1e-8)
    assert fit.clockwise
    assert fit.rms_residual < 1e-9


def test_lattice_traces_are_radius_half(fxy):
    seeds = lattice_seeds(make_bubble(), 0.1, 0.15, 0.7)
    pts, ok = integrate_flows(fxy, seeds, rho=0.1)
    assert ok.all() and len(seeds) > 100
    for k in range(len(seeds)):
        fit = fit_circle(pts[:, k, :])
        assert fit.radius == pytest.approx(0.5, abs=1e-6)
        assert fit.orientation == -1


def test_yt_traces_project_to_clockwise_circles(bubble, fyt):
    for seed in [(0.3, 0.2), (-0.4, 0.5), (0.2, -0.3)]:
        trace = integrate_flow(fyt, seed, rho=0.15)
        fit = fit_circle(projected_plane_curve(trace, bubble))
        assert fit.radius == pytest.approx(0.5, abs=1e-6)
        assert fit.clockwise


def test_default_rho_and_truncation(fxy):
    trace = integrate_flow(fxy, SEED)
    assert 0.1 < trace.rho < 2.0
    with pytest.raises(TruncatedTraceError) as info:
        integrate_flow(fxy, (0.8, 0.0), rho=1.0)
    prefix = info.value.trace
    assert prefix is not None and len(prefix.samples) > 2
    assert np.all(fxy.admissible(prefix.points))


def test_semigroup_and_area_growth(fxy):
    q = np.array([0.4, 0.1])
    a = flow_map(fxy, flow_map(fxy, q, 0.1), 0.05)
    b = flow_map(fxy, q, 0.15)
    assert np.max(np.abs(a - b)) < 1e-8
    back = flow_map(fxy, b, -0.15)
    assert np.max(np.abs(back - q)) < 1e-8
    tri = np.array([q, q + [1e-3, 0.0], q + [0.0, 1e-3]])

    def area(p):
        d1, d2 = p[1] - p[0], p[2] - p[0]
        return 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])

    for s in (0.05, 0.1):
        image = np.array([flow_map(fxy, p, s) for p in tri])
        assert area(image) / area(tri) == pytest.approx(math.exp(4 * s), rel=1e-3)


def test_arclength_reparam_unit_speed_and_inverse(fxy):
    trace = integrate_flow(fxy, SEED, rho=0.3)
    unit, sigma_of_s, s_of_sigma = arclength_reparam(trace, fxy)
    chord = np.hypot(*np.diff(unit.points, axis=0).T) / unit.step
    assert np.max(np.abs(chord - 1.0)) < 1e-6
    s = trace.samples.params
    assert np.max(np.abs(s_of_sigma(sigma_of_s(s)) - s)) < 1e-8
    assert fit_circle(unit.samples).radius == pytest.approx(0.5, abs=1e-8)


def test_reparam_with_unit_lambda_is_identity(fxy):
    trace = integrate_flow(fxy, SEED, rho=0.2)
    same, _, _ = arclength_reparam(trace, fxy, lam=lambda p: np.ones(len(p)))
    assert len(same.samples) == len(trace.samples)
    assert np.max(np.abs(same.points - trace.points)) < 1e-12
    with pytest.raises(ValueError):
        arclength_reparam(trace, fxy, lam=lambda p: np.zeros(len(p)))


def test_lift_is_minimizing_geodesic(bubble, fxy):
    trace = integrate_flow(fxy, SEED, rho=0.3)
    curve = lift_flow(trace, bubble)
    _, sigma_of_s, _ = arclength_reparam(trace, fxy)
    length = float(sigma_of_s(trace.rho) - sigma_of_s(-trace.rho))
    d = cc_distance(HPoint(*curve.points[0]), HPoint(*curve.points[-1]))
    assert d == pytest.approx(length, abs=1e-6)


def test_lift_rejects_non_flow_curve(bubble):
    s = np.linspace(0.0, 0.4, 401)
    fake = FlowTrace(SEED, SampledCurve(np.column_stack([0.1 + s, 0.2 + 0 * s]), 0.0, 1e-3), "xy", 1e-3, 0.2)
    with pytest.raises(ValueError):
        lift_flow(fake, bubble)


def test_chain_rule_and_normal_rotation(bubble, fxy):
    def w(p):
        fx, fy = bubble.bottom.gradient(p[:, 0], p[:, 1])
        u = np.column_stack([fx - 2 * p[:, 1], fy + 2 * p[:, 0]])
        return u / np.hypot(u[:, 0], u[:, 1])[:, None]

    gaps = []
    for step in (2e-3, 1e-3):
        trace = integrate_flow(fxy, (0.4, 0.1), rho=0.2, step=step)
        gaps.append(chain_rule_check(trace, fxy, w).max_discrepancy)
    # centred differences along the trace are second order in the step
    assert gaps[1] < 1e-4
    assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.1)
    # along the flow the unit normal turns at rate H |v| with H = 2
    p = trace.points
    vals = w(p)
    along = (vals[2:] - vals[:-2]) / (2 * trace.step)
    v = fxy.raw(p[1:-1])
    speed = np.hypot(v[:, 0], v[:, 1])
    perp = np.column_stack([-vals[1:-1, 1], vals[1:-1, 0]])
    assert np.max(np.abs(along + 2.0 * speed[:, None] * perp)) < 1e-4


def test_fit_circle_edge_cases():
    s = np.linspace(0, 1, 20)
    line = fit_circle(np.column_stack([s, 2 * s]))
    assert math.isinf(line.radius)
    with pytest.raises(ValueError):
        fit_circle(np.zeros((5, 2)))
    a = np.linspace(0, 1.0, 50)
    ccw = fit_circle(np.column_stack([3 + 2 * np.cos(a), -1 + 2 * np.sin(a)]))
    assert ccw.orientation == 1 and ccw.radius == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(ccw.center, (3, -1), atol=1e-12)
    with pytest.raises(ValueError):
        fit_circle(np.column_stack([np.cos(a * 0.05), np.sin(a * 0.05)]))


def test_ball_traces_are_not_constant_curvature():
    ball = make_candidate("euclidean_ball", {"R": 1.0})
    field = field_v(ball, "bottom")
    radii = [fit_circle(integrate_flow(field, seed, rho=0.1).samples).radius for seed in [(0.3, 0.0), (0.7, 0.0)]]
    assert abs(radii[0] - radii[1]) > 1e-3

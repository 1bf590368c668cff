"""Volume, horizontal perimeter, Minkowski content, isoperimetric ratio and curvature.

Quadrature conventions. Radial integrals over [0, R] use the substitution
r = R sin(theta) with the composite midpoint rule in theta: this removes the square
root singularities of chart gradients at the rim (e.g. the bubble, where |u| grows
like 1/sqrt(1 - r^2)). Rectangles use the tensor midpoint rule. Both are second
order, so ``|Q(n) - Q(n/2)| / 3`` is the reported error estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .bodies import ConvexBody, Disk, GraphChart, LateralChart, Rect
from .geodesics import _cubic_ratio

MIN_RESOLUTION = 16


def _check_n(n: int) -> None:
    if n < MIN_RESOLUTION:
        raise ValueError(f"quadrature resolution must be at least {MIN_RESOLUTION}, got {n}")


def _sine_nodes(n: int):
    """Midpoint nodes theta in (0, pi/2) with sin(theta), cos(theta) and weight."""
    theta = (np.arange(n) + 0.5) * (0.5 * math.pi / n)
    return np.sin(theta), np.cos(theta), 0.5 * math.pi / n


def _radial_integral(fn, radius: float, n: int) -> float:
    """2 pi int_0^R r fn(r) dr with r = R sin(theta)."""
    s, c, w = _sine_nodes(n)
    r = radius * s
    return float(2.0 * math.pi * np.sum(fn(r) * r * radius * c) * w)


def domain_nodes(domain: Disk | Rect, n: int):
    """Quadrature nodes (x, y) and weights for integrals over the domain."""
    if isinstance(domain, Rect):
        hx = (domain.x1 - domain.x0) / n
        hy = (domain.y1 - domain.y0) / n
        xs = domain.x0 + (np.arange(n) + 0.5) * hx
        ys = domain.y0 + (np.arange(n) + 0.5) * hy
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return gx.ravel(), gy.ravel(), np.full(n * n, hx * hy)
    s, c, w = _sine_nodes(n)
    m = 2 * n
    ang = (np.arange(m) + 0.5) * (2 * math.pi / m)
    r = domain.radius * s
    rr, aa = np.meshgrid(r, ang, indexing="ij")
    wts = np.outer(r * domain.radius * c * w, np.full(m, 2 * math.pi / m))
    return (domain.cx + rr * np.cos(aa)).ravel(), (domain.cy + rr * np.sin(aa)).ravel(), wts.ravel()


def _richardson(fn, n: int) -> tuple[float, float]:
    fine = fn(n)
    coarse = fn(n // 2)
    return fine, abs(fine - coarse) / 3.0


# ---------------------------------------------------------------- volume


def _volume(body: ConvexBody, n: int) -> float:
    if body.is_radial:
        return _radial_integral(lambda r: body.top.radial(r) - body.bottom.radial(r), body.domain.radius, n)
    x, y, w = domain_nodes(body.domain, n)
    return float(np.sum((body.top(x, y) - body.bottom(x, y)) * w))


def volume(body: ConvexBody, n: int = 4096) -> float:
    """Lebesgue volume: integral over D of g - f."""
    _check_n(n)
    return _volume(body, n)


def volume_with_error(body: ConvexBody, n: int = 4096) -> tuple[float, float]:
    _check_n(n)
    return _richardson(lambda m: _volume(body, m), n)


# ---------------------------------------------------------------- perimeter


def perimeter_graph_xy(chart: GraphChart, domain: Disk | Rect, n: int = 4096) -> float:
    """Integral over D of |grad f + 2 z_perp| for a graph chart t = f(z)."""
    _check_n(n)
    if chart.is_radial and isinstance(domain, Disk) and domain.cx == 0 and domain.cy == 0:
        return _radial_integral(lambda r: np.sqrt(chart.radial_deriv(r) ** 2 + 4 * r * r), domain.radius, n)
    x, y, w = domain_nodes(domain, n)
    gx, gy = chart.gradient(x, y)
    return float(np.sum(np.hypot(gx - 2 * y, gy + 2 * x) * w))


def yt_integrand(chart: LateralChart, y, t) -> np.ndarray:
    h = chart(y, t)
    hy, ht = chart.gradient(y, t)
    return np.hypot(1.0 - 2.0 * y * ht, hy - 2.0 * h * ht)


def perimeter_graph_yt(chart: LateralChart, n: int = 4096, t_range: tuple[float, float] | None = None) -> float:
    """Integral over E of sqrt((1 - 2 y h_t)^2 + (h_y - 2 h h_t)^2) for a chart x = h(y, t).

    ``t_range`` restricts E to a horizontal band. In y the substitution
    y = mid + half sin(theta) absorbs square-root behaviour at the ends of each row.
    """
    _check_n(n)
    reg = chart.region
    t0, t1 = (reg.t_lo, reg.t_hi) if t_range is None else t_range
    if not (reg.t_lo <= t0 < t1 <= reg.t_hi):
        raise ValueError(f"band {t0, t1} outside the chart region [{reg.t_lo}, {reg.t_hi}]")
    ht = (t1 - t0) / n
    ts = t0 + (np.arange(n) + 0.5) * ht
    theta = -0.5 * math.pi + (np.arange(n) + 0.5) * (math.pi / n)
    lo, hi = reg.y_lo(ts), reg.y_hi(ts)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    y = mid[:, None] + half[:, None] * np.sin(theta)[None, :]
    tt = np.broadcast_to(ts[:, None], y.shape)
    jac = half[:, None] * np.cos(theta)[None, :]
    return float(np.sum(yt_integrand(chart, y, tt) * jac) * ht * (math.pi / n))


def lateral_wall_area(body: ConvexBody, n: int = 4096) -> float:
    """Vertical walls over the rim of D where f < g: the integrand there is 1."""
    pts, _, wts = body.domain.boundary_quadrature(max(n, 64))
    gap = body.top(pts[:, 0], pts[:, 1]) - body.bottom(pts[:, 0], pts[:, 1])
    return float(np.sum(np.maximum(gap, 0.0) * wts))


def solid_angle_audit(body: ConvexBody, n_audit: int = 256) -> float:
    """Flux of (p - c)/|p - c|^3 through the chart surfaces, divided by 4 pi.

    Equals 1 when the bottom, top and wall pieces close up around the interior
    point c; a gap in the chart cover shows up as a deficit.
    """
    c = body.center()
    x, y, w = domain_nodes(body.domain, n_audit)
    dx, dy = x - c.x, y - c.y
    total = 0.0
    for chart, sgn in ((body.bottom, -1.0), (body.top, 1.0)):
        f = chart(x, y)
        fx, fy = chart.gradient(x, y)
        dt = f - c.t
        dist3 = (dx * dx + dy * dy + dt * dt) ** 1.5
        # outward normal times area element: sgn * (-f_x, -f_y, 1)
        total += float(np.sum(sgn * (dt - dx * fx - dy * fy) / dist3 * w))
    pts, nrm, wts = body.domain.boundary_quadrature(max(4 * n_audit, 64))
    a2 = (pts[:, 0] - c.x) ** 2 + (pts[:, 1] - c.y) ** 2
    proj = (pts[:, 0] - c.x) * nrm[:, 0] + (pts[:, 1] - c.y) * nrm[:, 1]
    lo = body.bottom(pts[:, 0], pts[:, 1]) - c.t
    hi = body.top(pts[:, 0], pts[:, 1]) - c.t

    def prim(s):
        return s / (a2 * np.sqrt(a2 + s * s))

    total += float(np.sum(proj * np.where(hi > lo, prim(hi) - prim(lo), 0.0) * wts))
    return total / (4.0 * math.pi)


def _perimeter(body: ConvexBody, n: int) -> float:
    return (perimeter_graph_xy(body.bottom, body.domain, n)
            + perimeter_graph_xy(body.top, body.domain, n)
            + lateral_wall_area(body, n))


def perimeter(body: ConvexBody, n: int = 4096, audit: bool = True, audit_tol: float = 1e-3) -> float:
    """Horizontal perimeter: bottom and top chart integrals plus vertical walls."""
    _check_n(n)
    if audit:
        cover = solid_angle_audit(body)
        if abs(cover - 1.0) > audit_tol:
            raise ValueError(f"{body.tag}: chart cover fails the solid-angle audit "
                             f"(enclosed fraction {cover:.6f}, expected 1)")
    return _perimeter(body, n)


def perimeter_with_error(body: ConvexBody, n: int = 4096) -> tuple[float, float]:
    _check_n(n)
    perimeter(body, MIN_RESOLUTION)  # runs the audit once
    return _richardson(lambda m: _perimeter(body, m), n)


# ---------------------------------------------------------------- ratios


def iso_ratio(body: ConvexBody, n: int = 4096) -> float:
    return perimeter(body, n) ** (4.0 / 3.0) / volume(body, n)


def curvature_H(body: ConvexBody, n: int = 4096) -> float:
    return 3.0 * perimeter(body, n) / (4.0 * volume(body, n))


@dataclass(frozen=True)
class MeasureReport:
    """Measures of one body. ``estimated_error`` bounds the error of ``iso_ratio``."""

    tag: str
    volume: float
    perimeter: float
    iso_ratio: float
    curvature_H: float
    quadrature_resolution: int
    estimated_error: float
    volume_error: float
    perimeter_error: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def measure_body(body: ConvexBody, n: int = 4096) -> MeasureReport:
    vol, dv = volume_with_error(body, n)
    per, dp = perimeter_with_error(body, n)
    iso = per ** (4.0 / 3.0) / vol
    err = iso * ((4.0 / 3.0) * dp / per + dv / vol)
    return MeasureReport(body.tag, vol, per, iso, 3.0 * per / (4.0 * vol), n, err, dv, dp)


# ---------------------------------------------------------------- Minkowski content


def _unit_sphere_params(n_phi: int, n_beta: int):
    """Grid on the unit CC sphere about the origin.

    The sphere is swept by endpoints of unit-length geodesics: arc angle phi in
    [-2 pi, 2 pi] (sign = sign of t) and direction beta of the chord.
    """
    phi = np.linspace(-2 * math.pi, 2 * math.pi, n_phi)
    beta = np.linspace(0, 2 * math.pi, n_beta, endpoint=False)
    return phi, beta


def _sphere_points(phi, beta):
    rad = np.sinc(phi / (2 * math.pi))  # 2 sin(phi/2) / phi
    tz = 2.0 * phi * _cubic_ratio(phi)  # 2 (phi - sin phi) / phi^2
    return rad * np.cos(beta), rad * np.sin(beta), tz


def _reach_gap(profile, r, t, eps, phi, beta):
    """min over sphere samples of t' - rho(|z'|) for q = (r, 0, t), t >= 0.

    Negative values mean the CC sphere of radius eps about q enters the body.
    ``phi``/``beta`` broadcast against (n, 1) columns of r, t.
    """
    sx, sy, st = _sphere_points(phi, beta)
    zx = r + eps * sx
    zy = eps * sy
    tt = t + eps * eps * st - 2.0 * r * eps * sy
    rad = np.hypot(zx, zy)
    inside = rad < profile.r_max
    return np.where(inside, tt - profile.rho(np.minimum(rad, profile.r_max)), np.inf)


def _in_neighbourhood(profile, r, t, eps, coarse=(33, 32), refine_levels=3, refine_pts=9):
    """Does the CC ball of radius eps about (r, 0, t) meet {|t| < rho(|z|)}?

    The ball meets the (connected, larger) body iff its boundary sphere does, so
    the test minimises a gap function over a coarse sphere grid, then zooms in
    around the best coarse sample.
    """
    phi, beta = _unit_sphere_params(*coarse)
    pp, bb = np.meshgrid(phi, beta, indexing="ij")
    pp, bb = pp.ravel()[None, :], bb.ravel()[None, :]
    rc, tc = r[:, None], t[:, None]
    gap = _reach_gap(profile, rc, tc, eps, pp, bb)
    k = np.argmin(gap, axis=1)
    best = gap[np.arange(len(r)), k]
    hit = best < 0
    todo = ~hit & np.isfinite(best)
    p0, b0 = pp[0, k], bb[0, k]
    dphi = phi[1] - phi[0]
    dbeta = beta[1] - beta[0]
    offs = np.linspace(-1, 1, refine_pts)
    for _ in range(refine_levels):
        if not np.any(todo):
            break
        idx = np.flatnonzero(todo)
        op, ob = np.meshgrid(offs * dphi, offs * dbeta, indexing="ij")
        cand_p = np.clip(p0[idx, None] + op.ravel()[None, :], -2 * math.pi, 2 * math.pi)
        cand_b = b0[idx, None] + ob.ravel()[None, :]
        g = _reach_gap(profile, rc[idx], tc[idx], eps, cand_p, cand_b)
        j = np.argmin(g, axis=1)
        p0[idx] = cand_p[np.arange(len(idx)), j]
        b0[idx] = cand_b[np.arange(len(idx)), j]
        gbest = g[np.arange(len(idx)), j]
        hit[idx] |= gbest < 0
        todo[idx] &= ~(gbest < 0)
        dphi *= 2.0 / (refine_pts - 1)
        dbeta *= 2.0 / (refine_pts - 1)
    return hit


def minkowski_content(body: ConvexBody, eps: float, n_mc: int = 200_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate of (V(A_eps) - V(A)) / eps and its standard error.

    A_eps is the open CC eps-neighbourhood. Bodies of revolution {|t| < rho(|z|)}
    are symmetric under rotations about the t-axis and under (x, y, t) -> (x, -y, -t),
    so samples are drawn in the quarter space t >= 0 and tested at (r, 0, t).
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    prof = body.profile
    if prof is None or not body.is_radial:
        raise ValueError("Minkowski content is implemented for bodies of revolution {|t| < rho(|z|)}")
    big_r = prof.r_max
    top = float(prof.rho(0.0))
    if eps > 0.25 * min(big_r, math.sqrt(top)):
        raise ValueError(f"eps = {eps} is not small relative to the body")
    # Euclidean reach, in the (r, t) half-plane, of points of the CC ball about (r, 0, t)
    def reach(r):
        return eps * (1.0 + 2.0 * r) + 4.0 * eps * eps / math.pi

    r_box = big_r + eps
    t_box = top + reach(0.0)
    rng = np.random.default_rng(seed)
    r = r_box * np.sqrt(rng.uniform(size=n_mc))  # uniform in the disk of radius r_box
    t = t_box * rng.uniform(size=n_mc)
    outside = (r >= big_r) | (t >= prof.rho(np.minimum(r, big_r)))
    # The cross-section {0 <= t < rho(r)} is closed under moving down or left, so a
    # disk of radius d about (r, t) can only meet it if the corner (r - d, t - d) lies in it.
    d = reach(r)
    corner_r = np.maximum(r - d, 0.0)
    band = outside & (corner_r < big_r) & (t - d < prof.rho(np.minimum(corner_r, big_r)))
    hits = np.zeros(n_mc, dtype=bool)
    idx = np.flatnonzero(band)
    for s0 in range(0, len(idx), 4096):
        sl = idx[s0 : s0 + 4096]
        hits[sl] = _in_neighbourhood(prof, r[sl], t[sl], eps)
    box_volume = 2.0 * math.pi * r_box**2 * t_box  # both halves t >= 0 and t <= 0
    p = hits.mean()
    shell = box_volume * p
    stderr = box_volume * math.sqrt(p * (1 - p) / n_mc)
    return shell / eps, stderr / eps

"""Minimizing Carnot-Caratheodory geodesics and distance.

A geodesic from the origin to (z, t), t > 0, is the horizontal lift of a clockwise
circular arc from 0 to z whose circular segment (arc plus chord) has area t/4.
With central angle phi the segment area is |z|^2 G(phi) / 4, where

    G(phi) = (phi - sin phi) / (1 - cos phi)

increases from 0 to +inf on (0, 2 pi). So the arc solves G(phi) = |t| / |z|^2.
Targets with t < 0 are handled with the isometry (x, y, t) -> (x, -y, -t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HPoint, SampledCurve, group_inv, group_mul, inv_arrays, mul_arrays

TWO_PI = 2.0 * math.pi

# Below this ratio |z| / sqrt|t| the target is treated as vertical (closed-form full circle).
VERTICAL_CUTOFF = 1e-12


@dataclass(frozen=True)
class GeodesicArc:
    endpoint: HPoint
    arc_angle: float
    radius: float
    center: tuple[float, float]
    orientation: int
    length: float

    @property
    def curvature(self) -> float:
        return 0.0 if math.isinf(self.radius) else 1.0 / self.radius

    @property
    def is_straight(self) -> bool:
        return self.arc_angle == 0.0


def _phi_minus_sin(phi: np.ndarray) -> np.ndarray:
    return phi**3 * _cubic_ratio(phi)


def _cubic_ratio(phi: np.ndarray) -> np.ndarray:
    """(phi - sin phi) / phi^3, with a series branch for small phi."""
    phi = np.asarray(phi, dtype=float)
    small = np.abs(phi) < 0.1
    p2 = np.where(small, phi, 0.0) ** 2
    series = 1 / 6 - p2 * (1 / 120 - p2 * (1 / 5040 - p2 * (1 / 362880 - p2 / 39916800)))
    safe = np.where(small, 1.0, phi)
    return np.where(small, series, (safe - np.sin(safe)) / safe**3)


def _half_sinc_sq(a: np.ndarray) -> np.ndarray:
    """(1 - cos a) / a^2 = (sin(a/2) / (a/2))^2 / 2."""
    return 0.5 * np.sinc(a / TWO_PI) ** 2


# Both branches are written in terms of angle-scaled quantities so that extreme
# ratios (angles near 1e-200) neither underflow nor lose precision.

def _log_g_small(x: np.ndarray):
    """log G and d(log G)/d(log phi) at phi = exp(x), for the branch phi <= pi."""
    phi = np.exp(x)
    n3 = _cubic_ratio(phi)
    d2 = _half_sinc_sq(phi)
    s1 = np.sinc(phi / math.pi)
    slope = d2 / n3 - s1 / d2
    return x + np.log(n3) - np.log(d2), slope


def _log_g_large(x: np.ndarray):
    """log G and d(log G)/d(log psi) at psi = 2 pi - phi = exp(x), for phi >= pi."""
    psi = np.exp(x)
    num = TWO_PI - psi + np.sin(psi)
    d2 = _half_sinc_sq(psi)
    s1 = np.sinc(psi / math.pi)
    slope = -psi * psi * d2 / num - s1 / d2
    return np.log(num) - np.log(d2) - 2.0 * x, slope


def _solve_branch(log_ratio: np.ndarray, fn, increasing: bool) -> np.ndarray:
    """Root of fn(x)[0] = log_ratio for x = log(angle), angle in (0, pi].

    Bisection on the angle until the bracket is narrower than 1e-3, then Newton in
    the log variables with bisection fallback whenever a step leaves the bracket.
    """
    n = log_ratio.shape[0]
    lo = np.full(n, 0.0)
    hi = np.full(n, math.pi)
    sign = 1.0 if increasing else -1.0
    # The residual is monotone in the angle; the left bracket end sits at angle 0
    # where log G is -inf (small branch) or +inf (large branch).
    while np.any(hi - lo > 1e-3):
        mid = 0.5 * (lo + hi)
        val, _ = fn(np.log(mid))
        above = sign * (val - log_ratio) > 0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    lo_x = np.where(lo > 0, np.log(np.maximum(lo, 1e-300)), -np.inf)
    hi_x = np.log(hi)
    x = np.where(lo > 0, 0.5 * (lo_x + hi_x), hi_x - 1.0)
    # Roots near angle 0 can sit far below the bracket in log space; Newton in log
    # coordinates is nearly exact there because log G is almost linear.
    for _ in range(100):
        val, slope = fn(x)
        res = val - log_ratio
        if np.all(np.abs(res) <= 1e-14):
            break
        step = res / slope
        x_new = x - step
        bad = ~np.isfinite(x_new) | (x_new > hi_x) | (x_new < lo_x)
        above = sign * res > 0
        hi_x = np.where(above, np.minimum(hi_x, x), hi_x)
        lo_x = np.where(above, lo_x, np.maximum(lo_x, x))
        fallback = np.where(np.isfinite(lo_x), 0.5 * (lo_x + hi_x), hi_x - 1.0)
        x = np.where(bad, fallback, x_new)
    return np.exp(x)


def solve_angles(zabs: np.ndarray, tabs: np.ndarray):
    """Vectorised arc solve for |z| > 0, |t| > 0.

    Returns (phi, half_sin, half_cos) with half_sin = sin(phi/2) and
    half_cos = cos(phi/2) evaluated without cancellation near phi = 2 pi.
    """
    zabs = np.asarray(zabs, dtype=float)
    tabs = np.asarray(tabs, dtype=float)
    log_ratio = np.log(tabs) - 2.0 * np.log(zabs)
    small = log_ratio <= math.log(math.pi / 2)
    phi = np.empty_like(zabs)
    hs = np.empty_like(zabs)
    hc = np.empty_like(zabs)
    if np.any(small):
        a = _solve_branch(log_ratio[small], _log_g_small, increasing=True)
        phi[small] = a
        hs[small] = np.sin(0.5 * a)
        hc[small] = np.cos(0.5 * a)
    big = ~small
    if np.any(big):
        psi = _solve_branch(log_ratio[big], _log_g_large, increasing=False)
        phi[big] = TWO_PI - psi
        hs[big] = np.sin(0.5 * psi)
        hc[big] = -np.cos(0.5 * psi)
    return phi, hs, hc


def arc_lengths(zabs, tabs) -> np.ndarray:
    """CC distance from the origin to points with horizontal norm ``zabs`` and height ``tabs``."""
    zabs = np.atleast_1d(np.asarray(zabs, dtype=float))
    tabs = np.abs(np.atleast_1d(np.asarray(tabs, dtype=float)))
    out = np.array(zabs, copy=True)
    vertical = (tabs > 0) & (zabs <= VERTICAL_CUTOFF * np.sqrt(tabs))
    out[vertical] = np.sqrt(math.pi * tabs[vertical])
    curved = (tabs > 0) & ~vertical
    if np.any(curved):
        phi, hs, _ = solve_angles(zabs[curved], tabs[curved])
        out[curved] = zabs[curved] * phi / (2.0 * hs)
    return out


def solve_arc(target: HPoint) -> GeodesicArc:
    """Minimizing geodesic from the origin to ``target``."""
    x, y, t = target.x, target.y, target.t
    zabs = math.hypot(x, y)
    if zabs == 0.0 and t == 0.0:
        raise ValueError("zero-length geodesic: target is the origin")
    if t == 0.0:
        return GeodesicArc(target, 0.0, math.inf, (0.0, 0.0), -1, zabs)
    sgn = 1.0 if t > 0 else -1.0
    # work with the conjugate target when t < 0
    yc = sgn * y
    tabs = abs(t)
    if zabs <= VERTICAL_CUTOFF * math.sqrt(tabs):
        radius = math.sqrt(tabs / (4.0 * math.pi))
        center = (radius, 0.0)
        phi = TWO_PI
        length = math.sqrt(math.pi * tabs)
    else:
        phi_a, hs_a, hc_a = solve_angles(np.array([zabs]), np.array([tabs]))
        phi, hs, hc = float(phi_a[0]), float(hs_a[0]), float(hc_a[0])
        radius = zabs / (2.0 * hs)
        length = radius * phi
        ex, ey = x / zabs, yc / zabs
        # centre lies to the right of the chord for minor arcs, to the left for major ones
        center = (0.5 * x + radius * hc * ey, 0.5 * yc - radius * hc * ex)
    if sgn < 0:
        center = (center[0], -center[1])
    return GeodesicArc(target, phi, radius, center, -1 if sgn > 0 else 1, length)


def cc_distance(p: HPoint, q: HPoint) -> float:
    if p == q:
        return 0.0
    g = group_mul(group_inv(p), q)
    if g.x == 0.0 and g.y == 0.0 and g.t == 0.0:
        return 0.0
    return float(arc_lengths(math.hypot(g.x, g.y), abs(g.t))[0])


def cc_distance_many(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distances between stacked points (..., 3), broadcasting."""
    p, q = np.broadcast_arrays(np.asarray(p, float), np.asarray(q, float))
    g = mul_arrays(inv_arrays(p), q)
    shape = g.shape[:-1]
    g = g.reshape(-1, 3)
    out = arc_lengths(np.hypot(g[:, 0], g[:, 1]), np.abs(g[:, 2]))
    return out.reshape(shape)


def arc_points(arc: GeodesicArc, s: np.ndarray) -> np.ndarray:
    """Points at arc-length ``s`` along the geodesic from the origin (closed-form lift)."""
    s = np.asarray(s, dtype=float)
    z = arc.endpoint
    if arc.is_straight:
        zabs = math.hypot(z.x, z.y)
        return np.column_stack([s * z.x / zabs, s * z.y / zabs, np.zeros_like(s)])
    sgn = -arc.orientation  # +1 for t > 0
    r = arc.radius
    # unit vector from the start point (origin) to the centre, in the t > 0 frame
    ux, uy = arc.center[0] / r, sgn * arc.center[1] / r
    alpha = s / r
    half = 2.0 * np.sin(0.5 * alpha) ** 2  # 1 - cos(alpha) without cancellation
    sa = np.sin(alpha)
    x = r * (half * ux - sa * uy)
    y = r * (sa * ux + half * uy)
    # lift height = 4 x (area of the circular segment cut off by the chord)
    t = 2.0 * r * r * _phi_minus_sin(alpha)
    return np.column_stack([x, sgn * y, sgn * t])


def geodesic_curve(p: HPoint, q: HPoint, n: int) -> SampledCurve:
    """Sampled minimizing geodesic from ``p`` to ``q``, uniform in arc length."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    if p == q:
        raise ValueError("zero-length geodesic: endpoints coincide")
    arc = solve_arc(group_mul(group_inv(p), q))
    s = np.linspace(0.0, arc.length, n)
    pts = arc_points(arc, s)
    pts = mul_arrays(np.broadcast_to(p.as_array(), pts.shape), pts)
    return SampledCurve(pts, 0.0, arc.length / (n - 1))

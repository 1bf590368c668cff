"""Convex bodies described by graph charts, the bubble, comparison candidates,
subdifferential probing and characteristic-set detection.

A body is C = {(z, t) : z in D, f(z) <= t <= g(z)} with f convex (bottom chart) and
g concave (top chart). Optionally a lateral chart x = h(y, t) over a region E of the
yt-plane describes the part of the boundary facing the negative x direction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import HPoint
from .geodesics import _cubic_ratio, _half_sinc_sq

Fn2 = Callable[[np.ndarray, np.ndarray], np.ndarray]
Grad2 = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


# ---------------------------------------------------------------- domains


@dataclass(frozen=True)
class Disk:
    radius: float
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"disk radius must be positive, got {self.radius}")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        r = self.radius
        return (self.cx - r, self.cx + r, self.cy - r, self.cy + r)

    def contains(self, a, b) -> np.ndarray:
        return np.hypot(np.asarray(a) - self.cx, np.asarray(b) - self.cy) < self.radius

    def dist_to_boundary(self, a, b) -> np.ndarray:
        return self.radius - np.hypot(np.asarray(a) - self.cx, np.asarray(b) - self.cy)

    def corners(self) -> np.ndarray:
        ang = np.linspace(0, 2 * math.pi, 16, endpoint=False)
        r = 0.999 * self.radius
        return np.column_stack([self.cx + r * np.cos(ang), self.cy + r * np.sin(ang)])

    def boundary_quadrature(self, n: int):
        """Midpoint nodes, outward normals and length weights on the circle."""
        ang = (np.arange(n) + 0.5) * (2 * math.pi / n)
        nrm = np.column_stack([np.cos(ang), np.sin(ang)])
        pts = np.array([self.cx, self.cy]) + self.radius * nrm
        return pts, nrm, np.full(n, 2 * math.pi * self.radius / n)


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def diameter(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    def contains(self, a, b) -> np.ndarray:
        a, b = np.asarray(a), np.asarray(b)
        return (a > self.x0) & (a < self.x1) & (b > self.y0) & (b < self.y1)

    def dist_to_boundary(self, a, b) -> np.ndarray:
        a, b = np.asarray(a), np.asarray(b)
        return np.minimum.reduce([a - self.x0, self.x1 - a, b - self.y0, self.y1 - b])

    def corners(self) -> np.ndarray:
        ex = 1e-3 * (self.x1 - self.x0)
        ey = 1e-3 * (self.y1 - self.y0)
        return np.array([[self.x0 + ex, self.y0 + ey], [self.x1 - ex, self.y0 + ey],
                         [self.x1 - ex, self.y1 - ey], [self.x0 + ex, self.y1 - ey]])

    def boundary_quadrature(self, n: int):
        per_side = max(1, n // 4)
        pts, nrm, wts = [], [], []
        sides = [
            ((self.x0, self.y0), (self.x1, self.y0), (0.0, -1.0)),
            ((self.x1, self.y0), (self.x1, self.y1), (1.0, 0.0)),
            ((self.x1, self.y1), (self.x0, self.y1), (0.0, 1.0)),
            ((self.x0, self.y1), (self.x0, self.y0), (-1.0, 0.0)),
        ]
        for a, b, nv in sides:
            a, b = np.array(a), np.array(b)
            s = (np.arange(per_side) + 0.5) / per_side
            pts.append(a + np.outer(s, b - a))
            nrm.append(np.tile(nv, (per_side, 1)))
            wts.append(np.full(per_side, np.linalg.norm(b - a) / per_side))
        return np.vstack(pts), np.vstack(nrm), np.concatenate(wts)


@dataclass(frozen=True)
class YTRegion:
    """E = {(y, t) : t_lo < t < t_hi, y_lo(t) < y < y_hi(t)}."""

    t_lo: float
    t_hi: float
    y_lo: Callable[[np.ndarray], np.ndarray]
    y_hi: Callable[[np.ndarray], np.ndarray]

    def contains(self, y, t) -> np.ndarray:
        y, t = np.asarray(y, float), np.asarray(t, float)
        inside_t = (t > self.t_lo) & (t < self.t_hi)
        tc = np.clip(t, self.t_lo, self.t_hi)
        return inside_t & (y > self.y_lo(tc)) & (y < self.y_hi(tc))

    def dist_to_boundary(self, y, t) -> np.ndarray:
        """Coordinate-wise clearance (a lower bound is not guaranteed for curved sides)."""
        y, t = np.asarray(y, float), np.asarray(t, float)
        tc = np.clip(t, self.t_lo, self.t_hi)
        return np.minimum.reduce([t - self.t_lo, self.t_hi - t, y - self.y_lo(tc), self.y_hi(tc) - y])

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        ts = np.linspace(self.t_lo, self.t_hi, 257)
        return (float(np.min(self.y_lo(ts))), float(np.max(self.y_hi(ts))), self.t_lo, self.t_hi)

    @property
    def diameter(self) -> float:
        y0, y1, t0, t1 = self.bounds
        return math.hypot(y1 - y0, t1 - t0)

    def corners(self) -> np.ndarray:
        ts = np.array([self.t_lo, self.t_lo, self.t_hi, self.t_hi])
        shrink = 1e-3 * (self.t_hi - self.t_lo)
        ts = ts + np.array([shrink, shrink, -shrink, -shrink])
        ys = np.array([self.y_lo(ts[0]), self.y_hi(ts[1]), self.y_lo(ts[2]), self.y_hi(ts[3])], dtype=float)
        mid = 0.5 * (np.array([self.y_lo(t) for t in ts]) + np.array([self.y_hi(t) for t in ts]))
        return np.column_stack([0.999 * ys + 0.001 * mid, ts])


# ---------------------------------------------------------------- charts


def _fd_grad(fn: Fn2) -> Grad2:
    def grad(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        h = 1e-6 * (1.0 + np.maximum(np.abs(a), np.abs(b)))
        return ((fn(a + h, b) - fn(a - h, b)) / (2 * h), (fn(a, b + h) - fn(a, b - h)) / (2 * h))

    return grad


@dataclass(frozen=True)
class GraphChart:
    """A graph chart over a plane domain: value(a, b) and its gradient.

    For rotationally symmetric charts over a centred disk ``radial`` and
    ``radial_deriv`` give the value and derivative as functions of the radius.
    """

    value: Fn2
    grad: Grad2 | None = None
    radial: Callable[[np.ndarray], np.ndarray] | None = None
    radial_deriv: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, a, b) -> np.ndarray:
        return self.value(np.asarray(a, float), np.asarray(b, float))

    def gradient(self, a, b) -> tuple[np.ndarray, np.ndarray]:
        g = self.grad if self.grad is not None else _fd_grad(self.value)
        return g(np.asarray(a, float), np.asarray(b, float))

    @property
    def is_radial(self) -> bool:
        return self.radial is not None and self.radial_deriv is not None

    def negated(self) -> "GraphChart":
        grad = self.grad
        return GraphChart(
            lambda a, b: -self.value(a, b),
            None if grad is None else (lambda a, b: tuple(-g for g in grad(a, b))),
            None if self.radial is None else (lambda r: -self.radial(r)),
            None if self.radial_deriv is None else (lambda r: -self.radial_deriv(r)),
        )


def radial_chart(fr: Callable, dfr: Callable) -> GraphChart:
    """Chart value(x, y) = fr(|z|) with gradient dfr(|z|) z/|z|."""

    def value(x, y):
        return fr(np.hypot(x, y))

    def grad(x, y):
        r = np.hypot(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r > 0, dfr(r) / np.where(r > 0, r, 1.0), 0.0)
        return s * x, s * y

    return GraphChart(value, grad, fr, dfr)


@dataclass(frozen=True)
class RadialProfile:
    """Body {|t| < rho(|z|)}: rho decreasing and concave on [0, r_max], rho(r_max) = 0."""

    rho: Callable[[np.ndarray], np.ndarray]
    drho: Callable[[np.ndarray], np.ndarray]
    r_max: float
    inverse_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def validate(self, n: int = 2001, tol: float = 1e-8) -> None:
        r = np.linspace(0.0, self.r_max, n)
        v = self.rho(r)
        if abs(v[-1]) > tol * max(1.0, abs(v[0])):
            raise ValueError(f"profile does not vanish at r_max: rho(r_max) = {v[-1]}")
        if np.any(v[:-1] <= 0):
            raise ValueError("profile must be positive on [0, r_max)")
        if np.max(v[:-2] - 2 * v[1:-1] + v[2:]) > tol:
            raise ValueError("profile is not concave")

    def inverse(self, t) -> np.ndarray:
        """r(t) with rho(r) = |t|; vectorised bisection unless a closed form is supplied."""
        t = np.abs(np.asarray(t, float))
        if self.inverse_fn is not None:
            return self.inverse_fn(t)
        lo = np.zeros_like(t)
        hi = np.full_like(t, self.r_max)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            above = self.rho(mid) > t
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class LateralChart:
    """Chart x = value(y, t) over ``region`` bounding the body from the left (value convex)."""

    value: Fn2
    grad: Grad2 | None
    region: YTRegion

    def __call__(self, y, t) -> np.ndarray:
        return self.value(np.asarray(y, float), np.asarray(t, float))

    def gradient(self, y, t) -> tuple[np.ndarray, np.ndarray]:
        g = self.grad if self.grad is not None else _fd_grad(self.value)
        return g(np.asarray(y, float), np.asarray(t, float))


def profile_left_chart(profile: RadialProfile, t_lo: float | None = None, t_hi: float | None = None) -> LateralChart:
    """Left chart x = -sqrt(r(t)^2 - y^2) of the body {|t| < rho(|z|)}."""
    top = float(profile.rho(np.array(0.0)))
    t_lo = -top if t_lo is None else t_lo
    t_hi = top if t_hi is None else t_hi

    def radius(t):
        return profile.inverse(t)

    def value(y, t):
        r = radius(t)
        return -np.sqrt(np.maximum(r * r - y * y, 0.0))

    def grad(y, t):
        r = radius(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            dr = np.sign(t) / profile.drho(r)
            root = np.sqrt(np.maximum(r * r - y * y, 0.0))
            return y / root, -r * dr / root

    region = YTRegion(t_lo, t_hi, lambda t: -radius(t), radius)
    return LateralChart(value, grad, region)


@dataclass(frozen=True, eq=False)
class ConvexBody:
    tag: str
    domain: Disk | Rect
    bottom: GraphChart
    top: GraphChart
    left: LateralChart | None = None
    profile: RadialProfile | None = None
    params: dict = field(default_factory=dict)

    @property
    def is_radial(self) -> bool:
        return isinstance(self.domain, Disk) and self.domain.cx == 0 and self.domain.cy == 0 \
            and self.bottom.is_radial and self.top.is_radial

    def contains(self, p: HPoint) -> bool:
        if not bool(self.domain.contains(p.x, p.y)):
            return False
        return float(self.bottom(p.x, p.y)) < p.t < float(self.top(p.x, p.y))

    def center(self) -> HPoint:
        """A point on the vertical through the domain centre, halfway between the charts."""
        x0, x1, y0, y1 = self.domain.bounds
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        return HPoint(cx, cy, 0.5 * float(self.bottom(cx, cy) + self.top(cx, cy)))

    def check_convexity(self, n_pairs: int = 4000, tol: float = 1e-10, seed: int = 0) -> None:
        """Sampled midpoint inequalities for f and -g, and f < g inside D."""
        rng = np.random.default_rng(seed)
        x0, x1, y0, y1 = self.domain.bounds
        pts = rng.uniform([x0, y0], [x1, y1], size=(4 * n_pairs, 2))
        pts = pts[self.domain.contains(pts[:, 0], pts[:, 1])]
        half = len(pts) // 2
        a, b = pts[:half], pts[half : 2 * half]
        m = 0.5 * (a + b)
        for name, chart, sgn in (("bottom", self.bottom, 1.0), ("top", self.top, -1.0)):
            fa, fb, fm = (sgn * chart(p[:, 0], p[:, 1]) for p in (a, b, m))
            gap = fm - 0.5 * (fa + fb)
            scale = 1.0 + np.abs(fa) + np.abs(fb)
            if np.any(gap > tol * scale):
                worst = int(np.argmax(gap / scale))
                raise ValueError(f"{self.tag}: {name} chart fails the midpoint convexity test at "
                                 f"{a[worst]}, {b[worst]} (excess {gap[worst]:.3e})")
        f, g = self.bottom(pts[:, 0], pts[:, 1]), self.top(pts[:, 0], pts[:, 1])
        if np.any(f >= g):
            raise ValueError(f"{self.tag}: bottom chart meets the top chart inside the domain")


# ---------------------------------------------------------------- families


def bubble_profile(scale: float = 1.0) -> RadialProfile:
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    lam = float(scale)

    def rho(r):
        s = np.clip(np.asarray(r, float) / lam, 0.0, 1.0)
        return lam * lam * (np.arccos(s) + s * np.sqrt(1.0 - s * s))

    def drho(r):
        s = np.clip(np.asarray(r, float) / lam, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            return -lam * 2.0 * s * s / np.sqrt(1.0 - s * s)

    def inverse(t):
        # With r = sin(u/2) the profile equation becomes u - sin(u) = pi - 2|t|.
        # Newton in log variables, where the left side is close to (u^3)/6, converges
        # in a few steps for every height including the poles.
        tau = np.clip(np.asarray(t, float) / (lam * lam), 0.0, math.pi / 2)
        d = math.pi - 2.0 * tau
        out = np.zeros_like(d)
        pos = d > 0
        logd = np.log(d[pos])
        x = np.minimum(logd / 3.0 + math.log(6.0) / 3.0, math.log(math.pi))
        for _ in range(50):
            u = np.exp(x)
            c3 = _cubic_ratio(u)
            slope = _half_sinc_sq(u) / c3
            step = (3.0 * x + np.log(c3) - logd) / slope
            x = np.minimum(x - step, math.log(math.pi))
            if np.all(np.abs(step) <= 1e-15):
                break
        out[pos] = np.sin(0.5 * np.exp(x))
        return lam * out

    return RadialProfile(rho, drho, lam, inverse)


def body_of_revolution(tag: str, profile: RadialProfile, params: dict | None = None) -> ConvexBody:
    """The body {|t| < rho(|z|)} with bottom -rho, top rho and the matching left chart."""
    bottom = radial_chart(lambda r: -profile.rho(r), lambda r: -profile.drho(r))
    top = radial_chart(profile.rho, profile.drho)
    return ConvexBody(tag, Disk(profile.r_max), bottom, top, profile_left_chart(profile), profile, params or {})


def make_bubble(scale: float = 1.0) -> ConvexBody:
    """The bubble {|t| < arccos|z| + |z| sqrt(1 - |z|^2)}, dilated by ``scale``."""
    return body_of_revolution("bubble", bubble_profile(scale), {"scale": float(scale)})


def _positive(params: dict, key: str, default: float) -> float:
    v = float(params.get(key, default))
    if not (math.isfinite(v) and v > 0):
        raise ValueError(f"parameter {key} must be positive and finite, got {v}")
    return v


def make_candidate(family: str, params: dict | None = None) -> ConvexBody:
    """Comparison bodies: bubble, euclidean_ball, cylinder, box, cone."""
    params = dict(params or {})
    if family == "bubble":
        return make_bubble(_positive(params, "scale", 1.0))
    if family == "euclidean_ball":
        big_r = _positive(params, "R", 1.0)

        def rho(r):
            return np.sqrt(np.maximum(big_r * big_r - np.asarray(r, float) ** 2, 0.0))

        def drho(r):
            r = np.asarray(r, float)
            with np.errstate(divide="ignore"):
                return -r / np.sqrt(np.maximum(big_r * big_r - r * r, 0.0))

        def inverse(t):
            return np.sqrt(np.maximum(big_r * big_r - np.asarray(t, float) ** 2, 0.0))

        return body_of_revolution("euclidean_ball", RadialProfile(rho, drho, big_r, inverse), {"R": big_r})
    if family == "cone":
        big_r = _positive(params, "R", 1.0)
        a = _positive(params, "a", 1.0)

        def rho(r):
            return a * (1.0 - np.minimum(np.asarray(r, float), big_r) / big_r)

        def drho(r):
            return np.full_like(np.asarray(r, float), -a / big_r)

        def inverse(t):
            return big_r * np.clip(1.0 - np.abs(np.asarray(t, float)) / a, 0.0, 1.0)

        return body_of_revolution("cone", RadialProfile(rho, drho, big_r, inverse), {"R": big_r, "a": a})
    if family == "cylinder":
        big_r = _positive(params, "R", 1.0)
        a = _positive(params, "a", 1.0)
        bottom = radial_chart(lambda r: np.full_like(np.asarray(r, float), -a), lambda r: np.zeros_like(np.asarray(r, float)))
        top = radial_chart(lambda r: np.full_like(np.asarray(r, float), a), lambda r: np.zeros_like(np.asarray(r, float)))

        def wall(y, t):
            return -np.sqrt(np.maximum(big_r * big_r - y * y, 0.0))

        def wall_grad(y, t):
            with np.errstate(divide="ignore"):
                return y / np.sqrt(np.maximum(big_r * big_r - y * y, 0.0)), np.zeros_like(t)

        left = LateralChart(wall, wall_grad, YTRegion(-a, a, lambda t: np.full_like(np.asarray(t, float), -big_r),
                                                      lambda t: np.full_like(np.asarray(t, float), big_r)))
        return ConvexBody("cylinder", Disk(big_r), bottom, top, left, None, {"R": big_r, "a": a})
    if family == "box":
        lo = [float(v) for v in params.get("lo", [-1.0, -1.0, -1.0])]
        hi = [float(v) for v in params.get("hi", [1.0, 1.0, 1.0])]
        if len(lo) != 3 or len(hi) != 3 or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError(f"box needs lo < hi componentwise, got lo={lo}, hi={hi}")
        dom = Rect(lo[0], hi[0], lo[1], hi[1])
        zero = lambda a, b: (np.zeros_like(np.asarray(a, float)), np.zeros_like(np.asarray(b, float)))  # noqa: E731
        bottom = GraphChart(lambda a, b: np.full(np.broadcast(a, b).shape, lo[2]), zero)
        top = GraphChart(lambda a, b: np.full(np.broadcast(a, b).shape, hi[2]), zero)
        left = LateralChart(lambda y, t: np.full(np.broadcast(y, t).shape, lo[0]), zero,
                            YTRegion(lo[2], hi[2], lambda t: np.full_like(np.asarray(t, float), lo[1]),
                                     lambda t: np.full_like(np.asarray(t, float), hi[1])))
        return ConvexBody("box", dom, bottom, top, left, None, {"lo": lo, "hi": hi})
    raise ValueError(f"unknown candidate family {family!r}")


def grid_body(domain: Rect, f: np.ndarray, g: np.ndarray, tag: str = "custom") -> ConvexBody:
    """Body from node values f[i][j], g[i][j] at (x_i, y_j) on a regular grid over ``domain``."""
    f, g = np.asarray(f, float), np.asarray(g, float)
    if f.shape != g.shape or f.ndim != 2 or min(f.shape) < 2:
        raise ValueError("grid charts need matching 2-d arrays with at least 2 nodes per axis")
    xs = np.linspace(domain.x0, domain.x1, f.shape[0])
    ys = np.linspace(domain.y0, domain.y1, f.shape[1])

    def chart(vals: np.ndarray) -> GraphChart:
        interp = RegularGridInterpolator((xs, ys), vals, bounds_error=False, fill_value=None)
        gx, gy = np.gradient(vals, xs, ys, edge_order=2 if min(vals.shape) > 2 else 1)
        igx = RegularGridInterpolator((xs, ys), gx, bounds_error=False, fill_value=None)
        igy = RegularGridInterpolator((xs, ys), gy, bounds_error=False, fill_value=None)

        def value(a, b):
            a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
            return interp(np.stack([a, b], axis=-1))

        def grad(a, b):
            a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
            q = np.stack([a, b], axis=-1)
            return igx(q), igy(q)

        return GraphChart(value, grad)

    body = ConvexBody(tag, domain, chart(f), chart(g), None, None, {"shape": list(f.shape)})
    body.check_convexity()
    return body


def load_body(source: str | Path | dict) -> ConvexBody:
    """Load ``{"family": ..., "params": {...}}`` or ``{"grid": {"domain": [x0, x1, y0, y1], "f": ..., "g": ...}}``."""
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        doc = json.loads(text) if text.lstrip().startswith("{") else json.loads(Path(source).read_text())
    if "family" in doc:
        return make_candidate(doc["family"], doc.get("params", {}))
    if "grid" in doc:
        grid = doc["grid"]
        dom = grid["domain"]
        if isinstance(dom, dict):
            dom = [dom["x0"], dom["x1"], dom["y0"], dom["y1"]]
        return grid_body(Rect(*map(float, dom)), np.array(grid["f"]), np.array(grid["g"]), grid.get("tag", "custom"))
    raise ValueError("body description needs a 'family' or a 'grid' entry")


# ---------------------------------------------------------------- subdifferentials


N_DIRECTIONS = 32
N_RADII = 8


def _probe_offsets(spacing: float, reach: float) -> np.ndarray:
    ang = np.linspace(0, 2 * math.pi, N_DIRECTIONS, endpoint=False)
    radii = np.geomspace(spacing / 8, max(reach, spacing), N_RADII)
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)


def subdiff_contains_many(fn: Fn2, domain, z: np.ndarray, w: np.ndarray, tol: float, spacing: float) -> np.ndarray:
    """Vectorised subgradient test: for each row of ``z``, is ``w`` (same row) in the subdifferential?

    Checks fn(q') - fn(z) - w.(q' - z) >= -tol |q' - z| over probes q' on 32 rays at
    8 geometric radii from spacing/8 to half the domain diameter, plus domain corners.
    Probes falling outside the domain are ignored.
    """
    z = np.atleast_2d(np.asarray(z, float))
    w = np.broadcast_to(np.asarray(w, float), z.shape)
    offs = _probe_offsets(spacing, 0.5 * domain.diameter)
    corners = domain.corners()
    out = np.empty(len(z), dtype=bool)
    chunk = max(1, 200_000 // (len(offs) + len(corners)))
    for s in range(0, len(z), chunk):
        zz, ww = z[s : s + chunk], w[s : s + chunk]
        q = np.concatenate([zz[:, None, :] + offs[None, :, :],
                            np.broadcast_to(corners, (len(zz),) + corners.shape)], axis=1)
        d = q - zz[:, None, :]
        valid = domain.contains(q[..., 0], q[..., 1])
        qx = np.where(valid, q[..., 0], zz[:, None, 0])
        qy = np.where(valid, q[..., 1], zz[:, None, 1])
        fz = fn(zz[:, 0], zz[:, 1])
        gap = fn(qx, qy) - fz[:, None] - np.einsum("nk,nmk->nm", ww, d)
        slack = gap + tol * np.hypot(d[..., 0], d[..., 1])
        out[s : s + chunk] = np.all(~valid | (slack >= 0), axis=1)
    return out


def subdiff_contains(fn: Fn2, z, w, tol: float, domain, spacing: float = 1e-2) -> bool:
    """True iff ``w`` passes the sampled subgradient inequality for convex ``fn`` at ``z``."""
    z = np.asarray(z, float)
    if not bool(domain.contains(z[0], z[1])):
        raise ValueError(f"point {tuple(z)} lies outside the chart domain")
    return bool(subdiff_contains_many(fn, domain, z[None, :], np.asarray(w, float)[None, :], tol, spacing)[0])


def _interior_grid(domain, spacing: float) -> np.ndarray:
    x0, x1, y0, y1 = domain.bounds
    xs = np.arange(math.ceil(x0 / spacing), math.floor(x1 / spacing) + 1) * spacing
    ys = np.arange(math.ceil(y0 / spacing), math.floor(y1 / spacing) + 1) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    # nodes within one spacing of the chart boundary are not classified
    keep = domain.contains(pts[:, 0], pts[:, 1]) & (domain.dist_to_boundary(pts[:, 0], pts[:, 1]) > spacing)
    return pts[keep]


def characteristic_set(body: ConvexBody, chart: str = "bottom", spacing: float = 0.02,
                       tol: float | None = None, method: str = "subdiff") -> np.ndarray:
    """Grid points (plane coordinates of the chart) satisfying the characteristic criterion.

    bottom: -2 z_perp in the subdifferential of f; top: 2 z_perp in that of -g;
    left: y != 0 and (h/y, 1/(2y)) in that of h. ``method="gradient"`` uses the
    smooth-chart reduction |grad - w| <= tol instead of probing.
    """
    tol = 3.0 * spacing if tol is None else tol
    if chart in ("bottom", "top"):
        dom = body.domain
        gc = body.bottom if chart == "bottom" else body.top.negated()
        pts = _interior_grid(dom, spacing)
        sgn = -1.0 if chart == "bottom" else 1.0
        # z_perp = (-y, x)
        w = sgn * 2.0 * np.column_stack([-pts[:, 1], pts[:, 0]])
        fn = gc.value
        grad = gc.gradient
    elif chart == "left":
        if body.left is None:
            raise ValueError(f"body {body.tag!r} has no left chart")
        dom = body.left.region
        pts = _interior_grid(dom, spacing)
        pts = pts[np.abs(pts[:, 0]) > spacing]
        h = body.left(pts[:, 0], pts[:, 1])
        w = np.column_stack([h / pts[:, 0], 0.5 / pts[:, 0]])
        fn = body.left.value
        grad = body.left.gradient
    else:
        raise ValueError(f"unknown chart {chart!r}; expected bottom, top or left")
    if len(pts) == 0:
        return pts
    if method == "gradient":
        gx, gy = grad(pts[:, 0], pts[:, 1])
        sel = np.hypot(gx - w[:, 0], gy - w[:, 1]) <= tol
    elif method == "subdiff":
        sel = subdiff_contains_many(fn, dom, pts, w, tol, spacing)
    else:
        raise ValueError(f"unknown method {method!r}")
    return pts[sel]


def sigma_points(body: ConvexBody, spacing: float = 0.02, method: str = "subdiff") -> np.ndarray:
    """Characteristic samples from every chart, as points of the group (n, 3)."""
    out = []
    for chart in ("bottom", "top", "left"):
        if chart == "left" and body.left is None:
            continue
        pts = characteristic_set(body, chart, spacing, method=method)
        if len(pts) == 0:
            continue
        if chart == "bottom":
            out.append(np.column_stack([pts, body.bottom(pts[:, 0], pts[:, 1])]))
        elif chart == "top":
            out.append(np.column_stack([pts, body.top(pts[:, 0], pts[:, 1])]))
        else:
            out.append(np.column_stack([body.left(pts[:, 0], pts[:, 1]), pts[:, 0], pts[:, 1]]))
    return np.vstack(out) if out else np.empty((0, 3))


@dataclass(frozen=True)
class SegmentFit:
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    midpoint: tuple[float, float, float]
    length: float
    n_samples: int
    horizontal_error: float

    @property
    def is_point(self) -> bool:
        return self.length == 0.0


@dataclass(frozen=True)
class SigmaReport:
    segments: tuple[SegmentFit, ...]
    horizontal: bool
    separated: bool | None
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "horizontal": self.horizontal,
            "separated_by_H0": self.separated,
            "violations": list(self.violations),
            "segments": [s.__dict__ for s in self.segments],
        }


def _fit_segment(pts: np.ndarray, point_radius: float) -> SegmentFit:
    mid = pts.mean(axis=0)
    xy = pts[:, :2] - mid[:2]
    if len(pts) > 1 and np.max(np.hypot(xy[:, 0], xy[:, 1])) > point_radius:
        _, _, vt = np.linalg.svd(xy, full_matrices=False)
        d = vt[0]
        proj = xy @ d
        a, b = mid[:2] + proj.min() * d, mid[:2] + proj.max() * d
        length = float(proj.max() - proj.min())
    else:
        a = b = mid[:2]
        length = 0.0
    # height of the horizontal plane through the midpoint above each sample
    plane = mid[2] + 2.0 * (mid[1] * xy[:, 0] - mid[0] * xy[:, 1])
    herr = float(np.max(np.abs(pts[:, 2] - plane)))

    def lift(p):
        off = p - mid[:2]
        return (float(p[0]), float(p[1]), float(mid[2] + 2.0 * (mid[1] * off[0] - mid[0] * off[1])))

    return SegmentFit(lift(a), lift(b), tuple(float(v) for v in mid), length, len(pts), herr)


def sigma_structure(points: np.ndarray, spacing: float, origin_inside: bool = True) -> SigmaReport:
    """Cluster characteristic samples, fit segments and check their horizontality.

    Samples closer than 3 spacings are linked; each connected group is fitted by a
    segment (or a point when it is no wider than 3 spacings). A valid structure has
    at most two groups, each lying in the horizontal plane through its midpoint,
    separated by the plane t = 0 when the origin is interior.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError("sigma_structure needs a nonempty (n, 3) sample array")
    radius = 3.0 * spacing
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts), len(pts)))
    n_comp, labels = connected_components(adj, directed=False)
    groups = [pts[labels == k] for k in range(n_comp)]
    groups.sort(key=lambda g: float(g[:, 2].mean()))
    segments = tuple(_fit_segment(g, radius) for g in groups)
    violations = []
    if n_comp > 2:
        violations.append(f"{n_comp} clusters found, at most 2 expected")
    horizontal = all(s.horizontal_error <= spacing for s in segments)
    if not horizontal:
        violations.append("a cluster does not lie in the horizontal plane through its midpoint")
    separated = None
    if origin_inside and n_comp == 2:
        separated = bool(groups[0][:, 2].max() < 0 < groups[1][:, 2].min())
        if not separated:
            violations.append("the plane t = 0 does not separate the two clusters")
    return SigmaReport(segments, horizontal, separated, tuple(violations))

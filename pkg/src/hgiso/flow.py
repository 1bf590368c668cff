"""Integral curves of the boundary-tangent horizontal fields of a chart.

For a bottom chart t = f(z) the field is v = 2z - (grad f)_perp, which is -u_perp for
the horizontal normal u = grad f + 2 z_perp, so |v| = |u| and v vanishes exactly on the
characteristic set. For a lateral chart x = h(y, t) the field is
v = (1 - 2 y h_t, 2 y h_y - 2 h). On a constant-curvature boundary the integral
curves project to circles of radius 1/H, and their lifts are geodesics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline

from .bodies import ConvexBody, characteristic_set
from .core import SampledCurve, horizontal_lift

DEFAULT_STEP = 1e-3


class TruncatedTraceError(ValueError):
    """Raised when a trajectory leaves the admissible region; carries the valid prefix."""

    def __init__(self, message: str, trace: "FlowTrace | None"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class FlowTrace:
    start: tuple[float, float]
    samples: SampledCurve
    field_tag: str
    step: float
    rho: float

    @property
    def points(self) -> np.ndarray:
        return self.samples.points


@dataclass(frozen=True)
class CircleFit:
    center: tuple[float, float]
    radius: float
    rms_residual: float
    orientation: int

    @property
    def clockwise(self) -> bool:
        return self.orientation == -1

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "rms": self.rms_residual,
                "orientation": self.orientation}


@dataclass(frozen=True)
class VectorField:
    """Evaluator of a chart flow field with its admissible region.

    ``clearance`` is the minimum distance to the chart boundary and to the
    characteristic samples ``sigma`` that a trajectory must keep.
    """

    tag: str
    fn: Callable[[np.ndarray], np.ndarray]
    domain: object
    sigma: np.ndarray
    clearance: float

    def admissible(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        ok = self.domain.contains(p[:, 0], p[:, 1]) & (self.domain.dist_to_boundary(p[:, 0], p[:, 1]) >= self.clearance)
        if len(self.sigma):
            d = np.min(np.hypot(p[:, None, 0] - self.sigma[None, :, 0], p[:, None, 1] - self.sigma[None, :, 1]), axis=1)
            ok &= d >= self.clearance
        return ok

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, float)
        flat = np.atleast_2d(p)
        if not np.all(self.admissible(flat)):
            raise ValueError("field evaluated outside the admissible region (chart boundary or characteristic set)")
        return self.fn(flat).reshape(p.shape)

    def raw(self, p: np.ndarray) -> np.ndarray:
        """Evaluate without the admissibility check (used inside integrator stages)."""
        return self.fn(np.atleast_2d(np.asarray(p, float)))


def field_v(body: ConvexBody, chart: str = "bottom", spacing: float = DEFAULT_STEP,
            sigma_spacing: float = 0.02) -> VectorField:
    """Flow field of the bottom (xy) or left (yt) chart.

    The characteristic set is located on a grid of ``sigma_spacing`` with the
    gradient criterion; trajectories must stay 3 spacings away from it and from
    the chart boundary.
    """
    if chart == "bottom":
        gchart = body.bottom

        def fn(p):
            fx, fy = gchart.gradient(p[:, 0], p[:, 1])
            return np.column_stack([2 * p[:, 0] + fy, 2 * p[:, 1] - fx])

        domain = body.domain
    elif chart == "left":
        if body.left is None:
            raise ValueError(f"body {body.tag!r} has no left chart")
        lchart = body.left

        def fn(p):
            y, t = p[:, 0], p[:, 1]
            hv = lchart(y, t)
            hy, ht = lchart.gradient(y, t)
            return np.column_stack([1 - 2 * y * ht, 2 * y * hy - 2 * hv])

        domain = lchart.region
    else:
        raise ValueError(f"flow fields exist for the bottom and left charts, got {chart!r}")
    sigma = characteristic_set(body, chart, sigma_spacing, method="gradient")
    return VectorField("xy" if chart == "bottom" else "yt", fn, domain, sigma, 3.0 * spacing)


def _rk4(field: VectorField, p: np.ndarray, h: float) -> np.ndarray:
    k1 = field.raw(p)
    k2 = field.raw(p + 0.5 * h * k1)
    k3 = field.raw(p + 0.5 * h * k2)
    k4 = field.raw(p + h * k3)
    return p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_each(field: VectorField, p: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One RK4 step per row with per-row step sizes ``h`` (shape (n, 1))."""
    k1 = field.raw(p)
    k2 = field.raw(p + 0.5 * h * k1)
    k3 = field.raw(p + 0.5 * h * k2)
    k4 = field.raw(p + h * k3)
    return p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _march(field: VectorField, seeds: np.ndarray, n_steps: int, h: float):
    """Fixed-step RK4 from many seeds; returns (path (n_steps+1, k, 2), valid steps per seed)."""
    path = np.empty((n_steps + 1,) + seeds.shape)
    path[0] = seeds
    alive = field.admissible(seeds)
    last = np.where(alive, n_steps, -1)
    p = seeds.copy()
    for i in range(1, n_steps + 1):
        with np.errstate(all="ignore"):
            q = _rk4(field, p, h)
        ok = np.all(np.isfinite(q), axis=1)
        ok[ok] = field.admissible(q[ok])
        died = alive & ~ok
        last[died] = i - 1
        alive &= ok
        p = np.where(alive[:, None], q, p)
        path[i] = p
        if not np.any(alive):
            path[i + 1 :] = p
            break
    return path, last


def integrate_flows(field: VectorField, seeds, rho: float, step: float = DEFAULT_STEP):
    """Vectorised flow over [-rho, rho] for many seeds.

    Returns (points (2N+1, k, 2), ok (k,)) where ok marks seeds whose whole trace
    stayed admissible.
    """
    seeds = np.atleast_2d(np.asarray(seeds, float))
    if not rho > 0 or not step > 0:
        raise ValueError("rho and step must be positive")
    n = max(1, int(round(rho / step)))
    h = rho / n
    fwd, lf = _march(field, seeds, n, h)
    bwd, lb = _march(field, seeds, n, -h)
    pts = np.concatenate([bwd[::-1], fwd[1:]], axis=0)
    return pts, (lf == n) & (lb == n)


def max_flow_time(field: VectorField, q0, step: float = DEFAULT_STEP, cap: float = 2.0) -> float:
    """Largest rho (up to ``cap``) for which the trace from q0 stays admissible both ways."""
    n = int(round(cap / step))
    seeds = np.atleast_2d(np.asarray(q0, float))
    _, lf = _march(field, seeds, n, step)
    _, lb = _march(field, seeds, n, -step)
    k = int(min(lf[0], lb[0]))
    if k <= 0:
        raise ValueError(f"seed {tuple(seeds[0])} is not admissible")
    return k * step


def integrate_flow(field: VectorField, q0, rho: float | None = None, step: float = DEFAULT_STEP) -> FlowTrace:
    """Classical RK4 trace from ``q0`` over [-rho, rho] (default rho: largest admissible, capped at 2)."""
    q0 = np.asarray(q0, float)
    if not bool(field.admissible(q0[None, :])[0]):
        raise ValueError(f"seed {tuple(q0)} is outside the admissible region")
    if rho is None:
        rho = max_flow_time(field, q0, step)
    n = max(1, int(round(rho / step)))
    h = rho / n
    fwd, lf = _march(field, q0[None, :], n, h)
    bwd, lb = _march(field, q0[None, :], n, -h)
    kf, kb = int(lf[0]), int(lb[0])
    if kf == n and kb == n:
        pts = np.concatenate([bwd[::-1, 0], fwd[1:, 0]])
        return FlowTrace(tuple(q0), SampledCurve(pts, -rho, h), field.tag, h, rho)
    pts = np.concatenate([bwd[kb::-1, 0], fwd[1 : kf + 1, 0]])
    prefix = None
    if len(pts) >= 2:
        prefix = FlowTrace(tuple(q0), SampledCurve(pts, -kb * h, h), field.tag, h, min(kb, kf) * h)
    raise TruncatedTraceError(
        f"trajectory from {tuple(q0)} leaves the admissible region after {kf} forward / {kb} backward steps",
        prefix)


def flow_map(field: VectorField, q, s: float, step: float = DEFAULT_STEP) -> np.ndarray:
    """Phi(q, s) by RK4 with steps of size ``step`` (last step shortened)."""
    p = np.atleast_2d(np.asarray(q, float)).copy()
    n = int(math.floor(abs(s) / step + 1e-9))
    h = math.copysign(step, s)
    for _ in range(n):
        p = _rk4(field, p, h)
    rest = s - n * h
    if abs(rest) > 1e-15:
        p = _rk4(field, p, rest)
    return p.reshape(np.shape(q))


# ---------------------------------------------------------------- reparameterisation


def arclength_reparam(trace: FlowTrace, field: VectorField, lam: Callable | None = None,
                      floor: float = 1e-9) -> tuple[FlowTrace, Callable, Callable]:
    """Resample a trace at unit speed with respect to lam (default |v|).

    sigma(s) = int_0^s lam(Phi(q, xi)) d xi by cumulative Simpson and its inverse s(sigma)
    is a Hermite interpolant with derivative 1/lam. Each resampled point is pushed
    along the flow from the nearest stored sample by one RK4 substep, so it lies
    on the trajectory to integrator accuracy. Returns (trace in sigma with the
    same step, sigma_of_s, s_of_sigma).
    """
    coarse = trace.points
    sub = 4  # quadrature substeps per stored step
    frac = (trace.samples.ds / sub) * np.arange(sub)
    base = np.repeat(coarse[:-1], sub, axis=0)
    pts = np.vstack([_rk4_each(field, base, np.tile(frac, len(coarse) - 1)[:, None]), coarse[-1:]])
    s = trace.samples.s0 + (trace.samples.ds / sub) * np.arange(len(pts))
    vel = field.raw(pts)
    speed = np.hypot(vel[:, 0], vel[:, 1]) if lam is None else np.asarray(lam(pts), float)
    if np.min(speed) < floor:
        raise ValueError(f"speed function drops below the floor {floor} on the trace")
    sig = cumulative_simpson(speed, x=s, initial=0.0)
    i0 = int(np.argmin(np.abs(s)))
    sig = sig - sig[i0]  # sigma(0) = 0 at the seed
    s_of_sigma = CubicHermiteSpline(sig, s, 1.0 / speed)
    sigma_of_s = CubicHermiteSpline(s, sig, speed)
    h = trace.step
    k0 = math.ceil(sig[0] / h - 1e-9)
    k1 = math.floor(sig[-1] / h + 1e-9)
    grid = h * np.arange(k0, k1 + 1)
    ss = np.clip(s_of_sigma(grid), s[0], s[-1])
    idx = np.clip(np.rint((ss - s[0]) / (trace.samples.ds / sub)).astype(int), 0, len(s) - 1)
    new = _rk4_each(field, pts[idx], (ss - s[idx])[:, None])
    out = FlowTrace(trace.start, SampledCurve(new, grid[0], h), trace.field_tag, h, trace.rho)
    return out, sigma_of_s, s_of_sigma


# ---------------------------------------------------------------- circle fit


def fit_circle(curve: SampledCurve | np.ndarray, refine_iters: int = 8) -> CircleFit:
    """Algebraic (Kasa) least-squares circle, refined by Gauss-Newton on geometric residuals."""
    pts = np.asarray(curve.points if isinstance(curve, SampledCurve) else curve, float)[:, :2]
    if len(pts) < 8:
        raise ValueError("circle fitting needs at least 8 samples")
    mean = pts.mean(axis=0)
    q = pts - mean
    scale = float(np.max(np.hypot(q[:, 0], q[:, 1])))
    if scale == 0:
        raise ValueError("all samples coincide")
    q = q / scale
    chords = np.diff(pts, axis=0)
    cross = chords[:-1, 0] * chords[1:, 1] - chords[:-1, 1] * chords[1:, 0]
    orientation = -1 if cross.mean() < 0 else 1
    # straight-line verdict: deviation from the principal line relative to extent
    _, sv, _ = np.linalg.svd(q, full_matrices=False)
    if sv[1] <= 1e-10 * sv[0]:
        return CircleFit((math.inf, math.inf), math.inf, float(sv[1] * scale / math.sqrt(len(q))), orientation)
    a = np.column_stack([q[:, 0], q[:, 1], np.ones(len(q))])
    rhs = -(q[:, 0] ** 2 + q[:, 1] ** 2)
    (d, e, f), *_ = np.linalg.lstsq(a, rhs, rcond=None)
    c = np.array([-d / 2, -e / 2])
    r = math.sqrt(max(c @ c - f, 0.0))
    for _ in range(refine_iters):
        diff = q - c
        dist = np.hypot(diff[:, 0], diff[:, 1])
        res = dist - r
        jac = np.column_stack([-diff[:, 0] / dist, -diff[:, 1] / dist, -np.ones(len(q))])
        delta, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        c = c + delta[:2]
        r = r + delta[2]
        if np.max(np.abs(delta)) < 1e-15:
            break
    diff = q - c
    rms = float(np.sqrt(np.mean((np.hypot(diff[:, 0], diff[:, 1]) - r) ** 2)))
    ang = np.unwrap(np.arctan2(diff[:, 1], diff[:, 0]))
    if abs(ang[-1] - ang[0]) < 0.1:
        raise ValueError("samples span less than 0.1 rad of arc")
    center = c * scale + mean
    return CircleFit((float(center[0]), float(center[1])), float(r * scale), rms * scale, orientation)


# ---------------------------------------------------------------- lifts and chain rule


def lift_flow(trace: FlowTrace, body: ConvexBody, tol: float | None = None) -> SampledCurve:
    """Space curve over a trace on the chart's surface, checked for horizontality.

    xy traces lift to (Phi, f(Phi)); yt traces to (h(Phi), Phi). The horizontal lift of
    the xy projection must reproduce the third coordinate within ``tol``
    (default 50 * step^2 * (1 + length)).
    """
    pts = trace.points
    if trace.field_tag == "xy":
        space = np.column_stack([pts, body.bottom(pts[:, 0], pts[:, 1])])
    elif trace.field_tag == "yt":
        space = np.column_stack([body.left(pts[:, 0], pts[:, 1]), pts[:, 0], pts[:, 1]])
    else:
        raise ValueError(f"unknown field tag {trace.field_tag!r}")
    curve = SampledCurve(space, trace.samples.s0, trace.samples.ds)
    relift = horizontal_lift(curve.projection(), space[0, 2])
    err = float(np.max(np.abs(relift.points[:, 2] - space[:, 2])))
    length = float(np.sum(np.hypot(*np.diff(space[:, :2], axis=0).T)))
    tol = 50.0 * trace.step**2 * (1.0 + length) if tol is None else tol
    if err > tol:
        raise ValueError(f"lifted trace is not horizontal: deviation {err:.3e} exceeds {tol:.3e}")
    return curve


def projected_plane_curve(trace: FlowTrace, body: ConvexBody) -> SampledCurve:
    """xy projection of the surface curve over a trace."""
    return lift_flow(trace, body, tol=math.inf).projection()


@dataclass(frozen=True)
class ChainRuleReport:
    max_discrepancy: float
    mean_discrepancy: float
    n_samples: int


def chain_rule_check(trace: FlowTrace, field: VectorField, w: Callable, jac: Callable | None = None,
                     fd_step: float = 1e-6) -> ChainRuleReport:
    """Compare d/ds (w o gamma) by centred differences along the trace with (grad w o gamma) gamma'.

    ``w`` maps (n, 2) points to (n, m) values; ``jac`` returns (n, m, 2) Jacobians
    (default: centred differences of ``w`` with ``fd_step``).
    """
    pts = trace.points
    h = trace.step
    vals = np.asarray(w(pts), float).reshape(len(pts), -1)
    along = (vals[2:] - vals[:-2]) / (2 * h)
    inner = pts[1:-1]
    vel = field.raw(inner)
    if jac is None:
        ex = np.array([fd_step, 0.0])
        ey = np.array([0.0, fd_step])
        jx = (np.asarray(w(inner + ex), float).reshape(len(inner), -1)
              - np.asarray(w(inner - ex), float).reshape(len(inner), -1)) / (2 * fd_step)
        jy = (np.asarray(w(inner + ey), float).reshape(len(inner), -1)
              - np.asarray(w(inner - ey), float).reshape(len(inner), -1)) / (2 * fd_step)
        predicted = jx * vel[:, :1] + jy * vel[:, 1:]
    else:
        j = np.asarray(jac(inner), float).reshape(len(inner), -1, 2)
        predicted = np.einsum("nmk,nk->nm", j, vel)
    gap = np.abs(along - predicted)
    return ChainRuleReport(float(gap.max()), float(gap.mean()), len(inner))


def lattice_seeds(body: ConvexBody, spacing: float, r_min: float, r_max: float) -> np.ndarray:
    """Lattice points of the bottom chart domain with r_min <= |z| <= r_max."""
    x0, x1, y0, y1 = body.domain.bounds
    xs = np.arange(math.ceil(x0 / spacing), math.floor(x1 / spacing) + 1) * spacing
    ys = np.arange(math.ceil(y0 / spacing), math.floor(y1 / spacing) + 1) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    p = np.column_stack([gx.ravel(), gy.ravel()])
    r = np.hypot(p[:, 0], p[:, 1])
    return p[(r >= r_min) & (r <= r_max)]

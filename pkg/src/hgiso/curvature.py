"""Horizontal normal fields on chart grids, the generalized curvature operator,
mollification and the curvature-stability experiment.

For a bottom chart t = f(x, y) the horizontal normal is u = grad f + 2 z_perp and the
boundary has constant curvature H when div(u/|u|) = H. For a lateral chart
x = h(y, t) the normal is u = (h_y - 2 h h_t, 1 - 2 y h_t) and the operator is

    M w = (d_y - a d_t) w_1 + b d_t w_2,   a = 2h, b = -2y.

Both are instances of M with coefficients (a, b); (0, 1) is the divergence.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion
from scipy.signal import fftconvolve

from .bodies import ConvexBody, Disk

# centred first-derivative stencils: offsets and weights (divide by spacing)
STENCILS = {
    2: (np.array([-1, 1]), np.array([-0.5, 0.5])),
    4: (np.array([-2, -1, 1, 2]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0),
}


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice origin + spacing * (i, j), 0 <= i < nx, 0 <= j < ny."""

    origin: tuple[float, float]
    spacing: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one node per axis")

    @classmethod
    def covering(cls, bounds: tuple[float, float, float, float], spacing: float) -> "GridSpec":
        """Lattice aligned with multiples of ``spacing`` covering the rectangle ``bounds``."""
        a0, a1, b0, b1 = bounds
        i0, i1 = math.floor(a0 / spacing), math.ceil(a1 / spacing)
        j0, j1 = math.floor(b0 / spacing), math.ceil(b1 / spacing)
        return cls((i0 * spacing, j0 * spacing), spacing, i1 - i0 + 1, j1 - j0 + 1)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.origin[0] + self.spacing * np.arange(self.nx)
        b = self.origin[1] + self.spacing * np.arange(self.ny)
        return a, b

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.axes()
        return np.meshgrid(a, b, indexing="ij")


@dataclass(frozen=True)
class ScalarGrid:
    grid: GridSpec
    values: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class VectorGrid:
    """2-vector samples on a lattice; ``mask`` marks valid nodes."""

    grid: GridSpec
    values: np.ndarray  # (nx, ny, 2)
    mask: np.ndarray  # (nx, ny) bool
    delta_floor: float = 0.0
    chart: str = "bottom"

    @property
    def origin(self) -> tuple[float, float]:
        return self.grid.origin

    @property
    def spacing(self) -> float:
        return self.grid.spacing

    def norms(self) -> np.ndarray:
        return np.hypot(self.values[..., 0], self.values[..., 1])

    def normalized(self) -> "VectorGrid":
        n = self.norms()
        safe = np.where(self.mask & (n > 0), n, 1.0)
        vals = np.where(self.mask[..., None], self.values / safe[..., None], 0.0)
        return VectorGrid(self.grid, vals, self.mask.copy(), self.delta_floor, self.chart)


@dataclass(frozen=True)
class ResidualGrid:
    grid: GridSpec
    residual: np.ndarray  # nan where masked
    mask: np.ndarray
    l1_norm: float
    linf_norm: float

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "residual", "mask"])
        a, b = self.grid.mesh()
        for x, y, r, m in zip(a.ravel(), b.ravel(), self.residual.ravel(), self.mask.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(r)) if m else "nan", int(m)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _disk_footprint(radius: int) -> np.ndarray:
    k = np.arange(-radius, radius + 1)
    return (k[:, None] ** 2 + k[None, :] ** 2) <= radius * radius


def field_u(body: ConvexBody, chart: str = "bottom", spacing: float = 2e-3,
            bounds: tuple[float, float, float, float] | None = None,
            sigma_tol: float | None = None, delta_floor: float | None = None) -> VectorGrid:
    """Sample the horizontal normal u of a chart on a lattice and build the validity mask.

    Masked out: nodes outside the chart domain or within 3 spacings of its boundary,
    nodes within 3 spacings of detected characteristic nodes (|u| <= sigma_tol,
    default 3 spacings), the band |y| < 3 spacings for lateral charts, and nodes with
    |u| below the delta floor (default: half the smallest |u| left, at least 1e-6).
    """
    h = spacing
    if chart == "bottom":
        dom = body.domain
        box = dom.bounds if bounds is None else bounds
        grid = GridSpec.covering(box, h)
        x, y = grid.mesh()
        inside = dom.contains(x, y) & (dom.dist_to_boundary(x, y) > 3 * h)
        xs, ys = np.where(inside, x, 0.0), np.where(inside, y, 0.0)
        fx, fy = body.bottom.gradient(xs, ys)
        u = np.stack([fx - 2 * ys, fy + 2 * xs], axis=-1)
    elif chart == "left":
        if body.left is None:
            raise ValueError(f"body {body.tag!r} has no left chart")
        reg = body.left.region
        box = reg.bounds if bounds is None else bounds
        grid = GridSpec.covering(box, h)
        y, t = grid.mesh()
        inside = reg.contains(y, t) & (reg.dist_to_boundary(y, t) > 3 * h) & (np.abs(y) >= 3 * h)
        ys = np.where(inside, y, 0.0)
        ts = np.where(inside, t, 0.5 * (reg.t_lo + reg.t_hi))
        hv = np.where(inside, body.left(ys, ts), 0.0)
        hy, ht = body.left.gradient(ys, ts)
        u = np.stack([hy - 2 * hv * ht, 1 - 2 * ys * ht], axis=-1)
    else:
        raise ValueError(f"curvature grids support the bottom and left charts, got {chart!r}")
    u = np.where(inside[..., None], u, 0.0)
    norm = np.hypot(u[..., 0], u[..., 1])
    inside &= np.isfinite(norm)
    sig_tol = 3 * h if sigma_tol is None else sigma_tol
    sigma = inside & (norm <= sig_tol)
    mask = inside & ~binary_dilation(sigma, structure=_disk_footprint(3))
    if not np.any(mask):
        raise ValueError("no unmasked nodes remain in the chart grid")
    if delta_floor is None:
        delta_floor = max(0.5 * float(norm[mask].min()), 1e-6)
    mask &= norm >= delta_floor
    if not np.any(mask):
        raise ValueError("no unmasked nodes remain above the delta floor")
    return VectorGrid(grid, np.where(mask[..., None], u, 0.0), mask, float(delta_floor), chart)


def _diff(values: np.ndarray, mask: np.ndarray, axis: int, h: float, order: int):
    """Centred derivative along ``axis`` and the nodes whose whole stencil is valid."""
    if order not in STENCILS:
        raise ValueError(f"stencil order must be 2 or 4, got {order}")
    offs, wts = STENCILS[order]
    reach = int(np.max(np.abs(offs)))
    n = values.shape[axis]
    out = np.zeros_like(values, dtype=float)
    ok = np.zeros(values.shape, dtype=bool)
    core = [slice(None)] * values.ndim
    core[axis] = slice(reach, n - reach)
    core = tuple(core)
    acc = np.zeros_like(values[core], dtype=float)
    ok_core = np.ones(acc.shape, dtype=bool)
    for o, w in zip(offs, wts):
        sl = [slice(None)] * values.ndim
        sl[axis] = slice(reach + o, n - reach + o)
        acc = acc + w * values[tuple(sl)]
        ok_core &= mask[tuple(sl)]
    out[core] = acc / h
    ok[core] = ok_core & mask[core]
    return out, ok


def _coef(c, shape) -> np.ndarray:
    if isinstance(c, ScalarGrid):
        return c.values
    return np.broadcast_to(np.asarray(c, float), shape)


def m_residual(w: VectorGrid, a, b, H: float, order: int = 2,
               region: np.ndarray | None = None) -> ResidualGrid:
    """Residual M(w) - H of the operator (d_1 - a d_2) w_1 + b d_2 w_2 on a unit field.

    ``a`` and ``b`` are numbers or ScalarGrids on the same lattice. Only nodes whose
    full stencil is unmasked (and inside ``region`` when given) are reported.
    """
    n = w.norms()
    if np.any(np.abs(n[w.mask] - 1.0) > 1e-8):
        raise ValueError("m_residual expects a unit field on unmasked nodes")
    h = w.spacing
    shape = w.mask.shape
    a_v, b_v = _coef(a, shape), _coef(b, shape)
    d1w1, ok1 = _diff(w.values[..., 0], w.mask, 0, h, order)
    d2w1, ok2 = _diff(w.values[..., 0], w.mask, 1, h, order)
    d2w2, _ = _diff(w.values[..., 1], w.mask, 1, h, order)
    val = d1w1 - a_v * d2w1 + b_v * d2w2
    ok = ok1 & ok2
    if region is not None:
        ok &= region
    res = np.where(ok, val - H, np.nan)
    if not np.any(ok):
        raise ValueError("no node has a complete stencil inside the region")
    r = res[ok]
    return ResidualGrid(w.grid, res, ok, float(np.sum(np.abs(r)) * h * h), float(np.max(np.abs(r))))


def operator_coefficients(body: ConvexBody, w: VectorGrid) -> tuple[ScalarGrid, ScalarGrid] | tuple[float, float]:
    """Coefficients (a, b) of the curvature operator for the chart of ``w``."""
    if w.chart == "bottom":
        return 0.0, 1.0
    y, t = w.grid.mesh()
    ys = np.where(w.mask, y, 0.0)
    ts = np.where(w.mask, t, 0.0)
    hv = np.where(w.mask, body.left(ys, ts), 0.0)
    return ScalarGrid(w.grid, 2.0 * hv, w.mask), ScalarGrid(w.grid, -2.0 * y, w.mask)


def default_region(body: ConvexBody, chart: str, margin: float = 0.05) -> Callable:
    """Reporting region away from the chart boundary and the characteristic set.

    bottom: margin <= |z - c| / R <= 1 - margin on disk domains, otherwise a
    clearance of margin * diameter from the boundary. left: |y| and the clearance
    to the region boundary both at least 2 * margin * (domain half-width).
    """
    dom = body.domain
    if chart == "bottom":
        if isinstance(dom, Disk):
            def region(x, y):
                r = np.hypot(x - dom.cx, y - dom.cy) / dom.radius
                return (r >= margin) & (r <= 1.0 - margin)
        else:
            def region(x, y):
                return dom.contains(x, y) & (dom.dist_to_boundary(x, y) >= margin * dom.diameter)
        return region
    if chart == "left":
        if body.left is None:
            raise ValueError(f"body {body.tag!r} has no left chart")
        x0, x1, _, _ = dom.bounds
        gap = margin * (x1 - x0)
        reg = body.left.region
        return lambda y, t: (np.abs(y) >= gap) & reg.contains(y, t) & (reg.dist_to_boundary(y, t) >= gap)
    raise ValueError(f"unknown chart {chart!r}")


def curvature_residual(body: ConvexBody, chart: str, spacing: float, H: float, order: int = 2,
                       bounds=None, region: Callable | None = None) -> ResidualGrid:
    """Convenience: field, normalisation, coefficients and residual in one call.

    ``region(a, b)`` selects the nodes at which the residual is reported.
    """
    u = field_u(body, chart, spacing, bounds)
    w = u.normalized()
    a, b = operator_coefficients(body, w)
    reg = None
    if region is not None:
        g0, g1 = w.grid.mesh()
        reg = np.asarray(region(g0, g1), dtype=bool)
    return m_residual(w, a, b, H, order, reg)


def divergence(vx: np.ndarray, vy: np.ndarray, h: float) -> np.ndarray:
    """Centred second-order divergence on interior nodes (edges are nan)."""
    out = np.full(vx.shape, np.nan)
    out[1:-1, 1:-1] = (vx[2:, 1:-1] - vx[:-2, 1:-1] + vy[1:-1, 2:] - vy[1:-1, :-2]) / (2 * h)
    return out


# ---------------------------------------------------------------- mollification


def bump(q2: np.ndarray) -> np.ndarray:
    """exp(-1 / (1 - |q|^2)) inside the unit ball, 0 outside (unnormalised)."""
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(q2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - q2, 1e-300)), 0.0)


def kernel(eps: float, spacing: float) -> np.ndarray:
    """Discrete mollifier on an odd (2m+1)^2 stencil, normalised to unit sum."""
    m = int(math.floor(eps / spacing))
    if m < 1:
        raise ValueError(f"eps = {eps} is below the grid spacing {spacing}")
    k = np.arange(-m, m + 1) * spacing / eps
    kx = bump(k[:, None] ** 2 + k[None, :] ** 2)
    return kx / kx.sum()


def mollify(values: np.ndarray, mask: np.ndarray, spacing: float, eps: float):
    """Convolve grid values (nx, ny) or (nx, ny, k) with the discrete mollifier.

    Returns (smoothed, valid) where ``valid`` marks nodes whose whole kernel support
    lies on valid input nodes, the discrete version of {dist(q, boundary) > eps}.
    """
    ker = kernel(eps, spacing)
    support = ker > 0
    valid = binary_erosion(mask, structure=support, border_value=0)
    if not np.any(valid):
        raise ValueError(f"eps = {eps} leaves no node whose kernel support is inside the domain")
    vals = np.where(mask[(...,) + (None,) * (values.ndim - 2)], values, 0.0)
    if vals.ndim == 2:
        out = fftconvolve(vals, ker, mode="same")
    else:
        out = np.stack([fftconvolve(vals[..., k], ker, mode="same") for k in range(vals.shape[-1])], axis=-1)
    return out, valid


def _chart_gradient_grid(body: ConvexBody, grid: GridSpec, margin: float):
    x, y = grid.mesh()
    dom = body.domain
    inside = dom.contains(x, y) & (dom.dist_to_boundary(x, y) > margin)
    xs, ys = np.where(inside, x, 0.0), np.where(inside, y, 0.0)
    fx, fy = body.bottom.gradient(xs, ys)
    return x, y, np.stack([fx, fy], axis=-1), inside


def _unit_divergence(ux, uy, mask, h):
    n = np.hypot(ux, uy)
    safe = np.where(mask & (n > 0), n, 1.0)
    wx, wy = ux / safe, uy / safe
    d1, ok1 = _diff(wx, mask, 0, h, 2)
    d2, ok2 = _diff(wy, mask, 1, h, 2)
    return d1 + d2, ok1 & ok2


@dataclass(frozen=True)
class StabilityRow:
    eps: float
    l1_error: float
    min_norm: float


def stability_experiment(body: ConvexBody, eps_list: Sequence[float], spacing: float = 2.5e-3,
                         annulus: tuple[float, float] = (0.2, 0.8), delta: float | None = None) -> list[StabilityRow]:
    """L1 distance on the annulus K between the curvature of the mollified normal and the
    reference curvature, for each mollification radius.

    The mollified normal is u_eps = (grad f) * chi_eps + 2 z_perp. K must avoid the
    characteristic set; ``delta`` (default half the smallest |u| on K) is the floor that
    |u_eps| must respect on K.
    """
    r0, r1 = annulus
    eps_max = max(eps_list)
    dom = body.domain
    if not (0 < r0 < r1) or r1 + eps_max + 4 * spacing >= getattr(dom, "radius", math.inf):
        raise ValueError("annulus plus mollification radius must stay inside the domain")
    box = (-r1 - eps_max - 4 * spacing, r1 + eps_max + 4 * spacing) * 2
    grid = GridSpec.covering((box[0], box[1], box[0], box[1]), spacing)
    x, y, grad, inside = _chart_gradient_grid(body, grid, spacing)
    rr = np.hypot(x, y)
    k_mask = (rr >= r0) & (rr <= r1)
    ux, uy = grad[..., 0] - 2 * y, grad[..., 1] + 2 * x
    ref, ok_ref = _unit_divergence(ux, uy, inside, spacing)
    base_norm = np.hypot(ux, uy)[k_mask]
    floor = 0.5 * float(base_norm.min()) if delta is None else delta
    if floor <= 0:
        raise ValueError("the annulus meets the characteristic set: |u| vanishes on K")
    rows = []
    for eps in eps_list:
        sm, valid = mollify(grad, inside, spacing, eps)
        vx, vy = sm[..., 0] - 2 * y, sm[..., 1] + 2 * x
        nrm = np.hypot(vx, vy)
        if not np.all(valid[k_mask]):
            raise ValueError(f"eps = {eps}: the annulus is not inside the mollified domain")
        if float(nrm[k_mask].min()) < floor:
            raise ValueError(f"eps = {eps}: |u_eps| drops below the floor {floor:.3e} on K")
        div, ok = _unit_divergence(vx, vy, valid, spacing)
        sel = k_mask & ok & ok_ref
        err = float(np.sum(np.abs(div[sel] - ref[sel])) * spacing * spacing)
        rows.append(StabilityRow(float(eps), err, float(nrm[k_mask].min())))
    return rows


# ---------------------------------------------------------------- total variation


@dataclass(frozen=True)
class TVReport:
    spacings: tuple[float, ...]
    tv: tuple[float, ...]
    ratios: tuple[float, ...]
    stable: bool
    max_neighbour_angle: float
    jump_detected: bool


def discrete_tv(w: VectorGrid, region: np.ndarray | None = None) -> tuple[float, float]:
    """Discrete total variation of a unit field and the largest angle between valid neighbours."""
    ok = w.mask if region is None else (w.mask & region)
    h = w.spacing
    v = w.values
    dx = (v[1:, :-1] - v[:-1, :-1]) / h
    dy = (v[:-1, 1:] - v[:-1, :-1]) / h
    cell = ok[1:, :-1] & ok[:-1, 1:] & ok[:-1, :-1]
    frob = np.sqrt(np.sum(dx * dx + dy * dy, axis=-1))
    tv = float(np.sum(frob[cell]) * h * h)
    cos_x = np.sum(v[1:, :] * v[:-1, :], axis=-1)[ok[1:, :] & ok[:-1, :]]
    cos_y = np.sum(v[:, 1:] * v[:, :-1], axis=-1)[ok[:, 1:] & ok[:, :-1]]
    cosines = np.concatenate([cos_x, cos_y])
    angle = float(np.arccos(np.clip(cosines.min(), -1.0, 1.0))) if cosines.size else 0.0
    return tv, angle


def tv_refinement_check(fields: Sequence[VectorGrid], region: Callable | None = None,
                        band: tuple[float, float] = (0.9, 1.1)) -> TVReport:
    """Discrete TV of unit fields at successively halved spacings over the region K.

    Stabilisation of the TV is the grid-level sign of a Sobolev field; the companion
    jump detector flags neighbouring unit vectors more than pi/2 apart.
    """
    tvs, angles = [], []
    for f in fields:
        reg = None
        if region is not None:
            a, b = f.grid.mesh()
            reg = np.asarray(region(a, b), dtype=bool)
        tv, ang = discrete_tv(f, reg)
        tvs.append(tv)
        angles.append(ang)
    ratios = tuple(b / a if a > 0 else (1.0 if b == 0 else math.inf) for a, b in zip(tvs, tvs[1:]))
    stable = all(band[0] <= q <= band[1] for q in ratios)
    max_angle = max(angles)
    return TVReport(tuple(f.spacing for f in fields), tuple(tvs), ratios, stable, max_angle,
                    max_angle >= math.pi / 2)

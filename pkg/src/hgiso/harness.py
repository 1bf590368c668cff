"""End-to-end experiments: first variation, candidate comparison, bubble reconstruction.

Every experiment returns a plain report object; writing CSV/JSON is left to the
callers (the command-line interface or :func:`write_comparison`).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .bodies import ConvexBody, characteristic_set, load_body, make_bubble
from .core import SampledCurve, horizontal_lift
from .measure import measure_body

DEFAULT_CANDIDATES = (
    {"family": "euclidean_ball", "params": {"R": 1.0}},
    {"family": "cylinder", "params": {"R": 1.0, "a": 1.0}},
    {"family": "box", "params": {}},
    {"family": "cone", "params": {"R": 1.0, "a": 1.0}},
)

DEFAULT_TOLERANCES = {
    "fd_variation": 1e-4,
    "analytic_variation": 1e-6,
    "circle_radius": 1e-5,
    "circle_rms": 1e-7,
    "geodesic_length": 1e-6,
    "reconstruction": 1e-8,
    "curvature_xy": 1e-5,
    "curvature_yt": 1e-4,
    "dilation": 1e-5,
}


@dataclass(frozen=True)
class ExperimentConfig:
    body: dict = field(default_factory=lambda: {"family": "bubble"})
    candidates: tuple = DEFAULT_CANDIDATES
    quadrature_n: int = 4096
    spacing: float = 1e-3
    spacing_yt: float = 2e-3
    eps_list: tuple = (0.08, 0.04, 0.02, 0.01)
    seed_lattice: dict = field(default_factory=lambda: {"spacing": 0.1, "r_min": 0.15, "r_max": 0.7})
    flow_rho: float = 0.1
    n_bumps: int = 10
    variation_delta: float = 1e-4
    bump_nodes: int = 256
    n_geodesics: int = 64
    lift_samples: int = 100_001
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    out_dir: str | None = None
    threads: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        tol = dict(DEFAULT_TOLERANCES)
        tol.update(self.tolerances)
        object.__setattr__(self, "tolerances", tol)
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "eps_list", tuple(float(e) for e in self.eps_list))
        for key, val in tol.items():
            if not val > 0:
                raise ValueError(f"tolerance {key} must be positive, got {val}")
        for key in ("quadrature_n", "bump_nodes", "lift_samples"):
            if getattr(self, key) < 16:
                raise ValueError(f"{key} must be at least 16, got {getattr(self, key)}")
        for key in ("spacing", "spacing_yt", "flow_rho", "variation_delta"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        if self.threads < 1 or self.n_geodesics < 1 or self.n_bumps < 1:
            raise ValueError("threads, n_geodesics and n_bumps must be at least 1")
        if any(e <= 0 for e in self.eps_list):
            raise ValueError("eps_list entries must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def load_body(self) -> ConvexBody:
        return load_body(self.body)


# ---------------------------------------------------------------- first variation


def _bump1(s: np.ndarray):
    """exp(1 - 1/(1 - s^2)) on |s| < 1 (peak value 1) and its derivative."""
    inside = np.abs(s) < 1
    q = np.where(inside, 1.0 - s * s, 1.0)
    val = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
    der = np.where(inside, val * (-2.0 * s / (q * q)), 0.0)
    return val, der


@dataclass(frozen=True)
class Bump:
    """Tensor bump amplitude * b((x - cx)/a) * b((y - cy)/a); its sup norm is |amplitude|."""

    cx: float
    cy: float
    half_width: float
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise ValueError("bump half width must be positive")

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude)

    def support_nodes(self, n: int):
        """Midpoint nodes and the common weight on the support square."""
        a = self.half_width
        s = -1.0 + (np.arange(n) + 0.5) * (2.0 / n)
        x, y = np.meshgrid(self.cx + a * s, self.cy + a * s, indexing="ij")
        return x.ravel(), y.ravel(), (2.0 * a / n) ** 2

    def value_and_grad(self, x, y):
        a = self.half_width
        bx, dbx = _bump1((np.asarray(x) - self.cx) / a)
        by, dby = _bump1((np.asarray(y) - self.cy) / a)
        amp = self.amplitude
        return amp * bx * by, (amp * dbx * by / a, amp * bx * dby / a)


@dataclass(frozen=True)
class VariationReport:
    bump: Bump
    fd_derivative: float
    fd_truncation: float
    analytic_derivative: float
    analytic_form: float
    perimeter_derivative: float
    volume_derivative: float

    @property
    def agreement(self) -> float:
        return abs(self.fd_derivative - self.analytic_derivative)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bump"] = asdict(self.bump)
        return d


def _check_bump_support(body: ConvexBody, bump: Bump, margin: float, sigma: np.ndarray) -> None:
    a = bump.half_width
    cx, cy = bump.cx, bump.cy
    corners = np.array([[cx - a, cy - a], [cx - a, cy + a], [cx + a, cy - a], [cx + a, cy + a]])
    dom = body.domain
    if not np.all(dom.contains(corners[:, 0], corners[:, 1])) or \
            np.min(dom.dist_to_boundary(corners[:, 0], corners[:, 1])) < margin:
        raise ValueError(f"bump support around ({cx:.3f}, {cy:.3f}) is not inside the domain with margin {margin}")
    if len(sigma):
        # distance from each characteristic sample to the support square
        dx = np.maximum(np.abs(sigma[:, 0] - cx) - a, 0.0)
        dy = np.maximum(np.abs(sigma[:, 1] - cy) - a, 0.0)
        if np.min(np.hypot(dx, dy)) < margin:
            raise ValueError(f"bump support around ({cx:.3f}, {cy:.3f}) touches the characteristic-set mask")


def first_variation(body: ConvexBody, bump: Bump, delta: float = 1e-4, n_nodes: int = 256,
                    quadrature_n: int = 4096, margin: float = 0.02, measures=None) -> VariationReport:
    """Derivative at 0 of I(eps) = P^{4/3}/V for the bottom chart f + eps * phi.

    The finite-difference route evaluates the perimeter change over the support of
    phi at eps = +-delta. The analytic route uses P'(0) = int (u/|u|) . grad phi and
    V'(0) = -int phi, giving I'(0) = P^{1/3} (4 P' V - 3 P V') / (3 V^2).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    sigma = characteristic_set(body, "bottom", 0.02, method="gradient")
    _check_bump_support(body, bump, margin, sigma)
    rep = measures if measures is not None else measure_body(body, quadrature_n)
    p0, v0 = rep.perimeter, rep.volume
    x, y, w = bump.support_nodes(n_nodes)
    fx, fy = body.bottom.gradient(x, y)
    ux, uy = fx - 2.0 * y, fy + 2.0 * x
    norm = np.hypot(ux, uy)
    if np.min(norm) <= 1e-12:
        raise ValueError("the horizontal normal vanishes on the bump support")
    phi, (px, py) = bump.value_and_grad(x, y)
    int_phi = float(np.sum(phi) * w)
    dp = float(np.sum((ux * px + uy * py) / norm) * w)
    dv = -int_phi

    def iso(eps):
        dper = np.sum(np.hypot(ux + eps * px, uy + eps * py) - norm) * w
        return (p0 + dper) ** (4.0 / 3.0) / (v0 - eps * int_phi)

    def central(h):
        return float((iso(h) - iso(-h)) / (2.0 * h))

    d1, d2 = central(delta), central(2.0 * delta)
    i0 = p0 ** (4.0 / 3.0) / v0
    truncation = abs(d2 - d1) / 3.0 + 10.0 * np.finfo(float).eps * i0 / delta
    form = 4.0 * dp * v0 - 3.0 * p0 * dv
    analytic = p0 ** (1.0 / 3.0) * form / (3.0 * v0 * v0)
    return VariationReport(bump, d1, truncation, analytic, form, dp, dv)


def random_bumps(body: ConvexBody, n: int, seed: int = 0, radius_range=(0.2, 0.75),
                 width_range=(0.03, 0.1), amplitude_range=(0.5, 2.0), margin: float = 0.02) -> list[Bump]:
    """Random admissible bumps whose supports avoid the boundary and the characteristic set."""
    rng = np.random.default_rng(seed)
    sigma = characteristic_set(body, "bottom", 0.02, method="gradient")
    x0, x1, y0, y1 = body.domain.bounds
    cx0, cy0, half = 0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.5 * min(x1 - x0, y1 - y0)
    out: list[Bump] = []
    for _ in range(1000 * n):
        if len(out) == n:
            break
        r = rng.uniform(*radius_range) * half
        ang = rng.uniform(0.0, 2.0 * math.pi)
        amp = rng.uniform(*amplitude_range) * rng.choice([-1.0, 1.0])
        bump = Bump(cx0 + r * math.cos(ang), cy0 + r * math.sin(ang), rng.uniform(*width_range), amp)
        try:
            _check_bump_support(body, bump, margin, sigma)
        except ValueError:
            continue
        out.append(bump)
    if len(out) < n:
        raise ValueError(f"could only place {len(out)} of {n} admissible bumps")
    return out


def worst_bump(body: ConvexBody, bumps, **kwargs) -> VariationReport:
    """The bump with the largest analytic first-variation magnitude."""
    rep = kwargs.pop("measures", None) or measure_body(body, kwargs.get("quadrature_n", 4096))
    reports = [first_variation(body, b, measures=rep, **kwargs) for b in bumps]
    return max(reports, key=lambda r: abs(r.analytic_form))


def radial_probe_bumps(body: ConvexBody, radii=(0.2, 0.35, 0.5, 0.65, 0.8), half_width: float = 0.08) -> list[Bump]:
    """Bumps centred on the positive x-axis at the given fractions of the domain radius."""
    x0, x1, _, _ = body.domain.bounds
    half = 0.5 * (x1 - x0)
    return [Bump(f * half, 0.0, half_width, 1.0) for f in radii]


# ---------------------------------------------------------------- candidate comparison


@dataclass(frozen=True)
class ComparisonRow:
    tag: str
    P: float
    V: float
    I: float
    H: float
    I_relative_to_bubble: float
    I_error: float
    margin_sigmas: float


@dataclass(frozen=True)
class ComparisonResult:
    rows: tuple[ComparisonRow, ...]
    reference: str

    @property
    def bubble_minimal(self) -> bool:
        """Every other row exceeds the reference by at least 3 quadrature sigmas."""
        return all(r.margin_sigmas >= 3.0 for r in self.rows[1:])

    def to_json(self) -> str:
        return json.dumps({"reference": self.reference, "bubble_minimal": self.bubble_minimal,
                           "rows": [asdict(r) for r in self.rows]}, indent=2)

    def to_csv(self) -> str:
        names = list(ComparisonRow.__dataclass_fields__)
        lines = [",".join(names)]
        for r in self.rows:
            lines.append(",".join(str(getattr(r, k)) for k in names))
        return "\n".join(lines) + "\n"


def _describe(entry: dict) -> str:
    params = entry.get("params", {})
    if not params:
        return entry.get("family", "custom")
    inner = ",".join(f"{k}={v}" for k, v in sorted(params.items()))
    return f"{entry.get('family', 'custom')}({inner})"


def _measure_candidate(entry: dict, n: int):
    try:
        body = load_body(entry)
        body.check_convexity()
    except ValueError as exc:
        raise ValueError(f"candidate {_describe(entry)} rejected: {exc}") from exc
    return measure_body(body, n)


def compare_candidates(config: ExperimentConfig) -> ComparisonResult:
    """Measure the reference body and all candidates; the reference is the first row."""
    entries = [config.body] + list(config.candidates)
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        reports = list(pool.map(lambda s: _measure_candidate(s, config.quadrature_n), entries))
    ref = reports[0]
    rows = []
    for entry, rep in zip(entries, reports):
        noise = max(rep.estimated_error + ref.estimated_error, 1e-15 * ref.iso_ratio)
        rows.append(ComparisonRow(_describe(entry), rep.perimeter, rep.volume, rep.iso_ratio, rep.curvature_H,
                                  rep.iso_ratio / ref.iso_ratio, rep.estimated_error,
                                  (rep.iso_ratio - ref.iso_ratio) / noise))
    return ComparisonResult(tuple(rows), _describe(entries[0]))


def write_comparison(result: ComparisonResult, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "compare.csv", out / "compare.json"
    csv_path.write_text(result.to_csv())
    json_path.write_text(result.to_json())
    return csv_path, json_path


# ---------------------------------------------------------------- reconstruction


@dataclass(frozen=True)
class ReconstructionReport:
    H: float
    n_geodesics: int
    n_samples: int
    south_pole: float
    north_pole: float
    pole_spread: float
    pole_mismatch: float
    max_deviation: float
    max_profile_residual: float
    surface: np.ndarray

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("surface")
        return d


def circle_lift(z0, direction: float, curvature: float, t0: float, length: float, n: int,
                orientation: int = -1) -> SampledCurve:
    """Numerical horizontal lift of a circle of the given curvature starting at z0.

    The circle leaves z0 in the direction angle ``direction`` and turns clockwise
    for orientation -1.
    """
    s = np.linspace(0.0, length, n)
    ang = direction + orientation * curvature * s
    # integral of exp(i ang) ds in closed form
    c = complex(z0[0], z0[1]) + (np.exp(1j * ang) - np.exp(1j * direction)) / (1j * orientation * curvature)
    plane = SampledCurve(np.column_stack([c.real, c.imag]), 0.0, length / (n - 1))
    return horizontal_lift(plane, t0)


def reconstruct_bubble(H: float = 2.0, n_geodesics: int = 64, n_samples: int = 100_001,
                       pole_tol: float = 1e-6) -> ReconstructionReport:
    """Sweep the surface of revolution of curvature-H geodesics from the south pole.

    Each geodesic is the lift of a full clockwise circle of radius 1/H through the
    origin; it rises 4 pi / H^2, from -(pi/2)(2/H)^2 to +(pi/2)(2/H)^2. The deviation
    from the bubble of scale 2/H is the vertical gap to the profile, normalised by
    the slope so that it approximates the distance to the surface.
    """
    if not H > 0:
        raise ValueError(f"H must be positive, got {H}")
    if n_geodesics < 1 or n_samples < 16:
        raise ValueError("need at least one geodesic and 16 samples per geodesic")
    lam = 2.0 / H
    pole = 0.5 * math.pi * lam * lam
    length = 2.0 * math.pi / H
    surface = np.empty((n_geodesics, n_samples, 3))
    for k in range(n_geodesics):
        theta = 2.0 * math.pi * k / n_geodesics
        surface[k] = circle_lift((0.0, 0.0), theta, H, -pole, length, n_samples).points
    ends = surface[:, -1, :]
    spread = float(np.max(np.abs(ends - ends.mean(axis=0))))
    if spread > pole_tol * max(1.0, pole):
        raise ValueError(f"geodesics do not close on a common north pole (spread {spread:.3e})")
    mismatch = float(np.max(np.abs(ends - np.array([0.0, 0.0, pole]))))
    body = make_bubble(lam)
    r = np.hypot(surface[..., 0], surface[..., 1])
    t = np.abs(surface[..., 2])
    rho = body.profile.rho(r)
    slope = body.profile.drho(np.minimum(r, lam * (1 - 1e-15)))
    deviation = np.abs(t - rho) / np.sqrt(1.0 + slope * slope)
    s = np.clip(r / lam, 0.0, 1.0)
    # the closed-form relation written out directly, with the same slope normalisation
    root = np.sqrt(np.maximum(1.0 - s * s, 1e-300))
    relation = np.abs(t / (lam * lam) - (np.arccos(s) + s * root)) * lam / np.sqrt(1.0 + (2.0 * s * s / root) ** 2)
    return ReconstructionReport(H, n_geodesics, n_samples, -pole, float(np.mean(ends[:, 2])), spread, mismatch,
                                float(np.max(deviation)), float(np.max(relation)), surface)


# ---------------------------------------------------------------- uniqueness probe


@dataclass(frozen=True)
class UniquenessReport:
    point: tuple[float, float, float]
    H: float
    staying_directions: tuple[float, ...]
    gaps: tuple[float, ...]
    tol: float

    @property
    def count(self) -> int:
        return len(self.staying_directions)


def _surface_gap(body: ConvexBody, curve: np.ndarray) -> float:
    x, y, t = curve[:, 0], curve[:, 1], curve[:, 2]
    if not np.all(body.domain.contains(x, y)):
        return math.inf
    return float(np.max(np.minimum(np.abs(t - body.bottom(x, y)), np.abs(t - body.top(x, y)))))


def uniqueness_probe(body: ConvexBody, z0, H: float | None = None, n_directions: int = 64,
                     window: float = 0.05, tol: float = 1e-6, n_samples: int = 2001,
                     chart: str = "bottom") -> UniquenessReport:
    """Directions in which a clockwise curvature-H geodesic from the boundary point over z0 stays on the boundary.

    The maximal vertical gap to the boundary over a short window is scanned on
    ``n_directions`` angles; each local minimum is refined and counted if its gap
    is below ``tol``. H defaults to 3P/(4V) of the body.
    """
    if H is None:
        H = measure_body(body, 1024).curvature_H
    chart_fn = body.bottom if chart == "bottom" else body.top
    x0, y0 = float(z0[0]), float(z0[1])
    t0 = float(chart_fn(x0, y0))

    def gap(theta: float) -> float:
        return _surface_gap(body, circle_lift((x0, y0), theta, H, t0, window, n_samples).points)

    thetas = 2.0 * math.pi * np.arange(n_directions) / n_directions
    vals = np.array([gap(th) for th in thetas])
    step = 2.0 * math.pi / n_directions
    staying, gaps = [], []
    for i in range(n_directions):
        if not (vals[i] <= vals[i - 1] and vals[i] <= vals[(i + 1) % n_directions]) or not np.isfinite(vals[i]):
            continue
        res = minimize_scalar(gap, bounds=(thetas[i] - step, thetas[i] + step), method="bounded",
                              options={"xatol": 1e-12})
        if res.fun <= tol:
            ang = float(res.x % (2.0 * math.pi))
            if all(abs((ang - a + math.pi) % (2 * math.pi) - math.pi) > 1e-6 for a in staying):
                staying.append(ang)
                gaps.append(float(res.fun))
    return UniquenessReport((x0, y0, t0), float(H), tuple(staying), tuple(gaps), tol)


"""Heisenberg group primitives: group law, dilations, horizontal planes and lifts.

Coordinates are (x, y, t) with z = (x, y) the horizontal part. The group law is

    (z, t)(z', t') = (z + z', t + t' + 2 (y x' - x y')).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid


@dataclass(frozen=True)
class HPoint:
    x: float
    y: float
    t: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "t"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"HPoint.{name} must be finite, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def parse(cls, text: str) -> "HPoint":
        """Parse ``"x,y,t"``."""
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected 'x,y,t', got {text!r}")
        return cls(*parts)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.t])

    @property
    def z(self) -> tuple[float, float]:
        return (self.x, self.y)


ORIGIN = HPoint(0.0, 0.0, 0.0)


def group_mul(p: HPoint, q: HPoint) -> HPoint:
    return HPoint(p.x + q.x, p.y + q.y, p.t + q.t + 2.0 * (p.y * q.x - p.x * q.y))


def group_inv(p: HPoint) -> HPoint:
    return HPoint(-p.x, -p.y, -p.t)


def dilate(lam: float, p: HPoint) -> HPoint:
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    return HPoint(lam * p.x, lam * p.y, lam * lam * p.t)


def hplane_height(p: HPoint, zprime) -> float:
    """Height of the horizontal plane through ``p`` above the horizontal offset ``zprime``.

    The plane H_p is the left translate of the xy-plane, so the point of H_p with
    horizontal coordinate ``p.z + zprime`` sits at ``p.t + 2 (y x' - x y')``.
    """
    xp, yp = zprime
    return p.t + 2.0 * (p.y * xp - p.x * yp)


# Vectorised forms, used by the distance and Minkowski code paths.

def mul_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Group product of stacked points (..., 3)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = p + q
    out[..., 2] += 2.0 * (p[..., 1] * q[..., 0] - p[..., 0] * q[..., 1])
    return out


def inv_arrays(p: np.ndarray) -> np.ndarray:
    return -np.asarray(p, dtype=float)


@dataclass(frozen=True)
class SampledCurve:
    """Uniformly parameterised plane (dim 2) or space (dim 3) curve.

    ``points[i]`` is the sample at parameter ``s0 + i * ds``.
    """

    points: np.ndarray
    s0: float = 0.0
    ds: float = 1.0

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ValueError(f"points must have shape (n, 2) or (n, 3), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("a sampled curve needs at least 2 points")
        if not self.ds > 0:
            raise ValueError(f"ds must be positive, got {self.ds}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("curve coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "s0", float(self.s0))
        object.__setattr__(self, "ds", float(self.ds))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def params(self) -> np.ndarray:
        return self.s0 + self.ds * np.arange(len(self))

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    def projection(self) -> "SampledCurve":
        return SampledCurve(self.points[:, :2], self.s0, self.ds)

    # serialisation

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "x", "y", "t"][: self.dim + 1])
        for s, row in zip(self.params, self.points):
            w.writerow([repr(float(s))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "SampledCurve":
        return cls.parse_csv(Path(path).read_text())

    @classmethod
    def parse_csv(cls, text: str) -> "SampledCurve":
        rows = list(csv.reader(io.StringIO(text)))
        header = [h.strip() for h in rows[0]]
        if header not in (["s", "x", "y"], ["s", "x", "y", "t"]):
            raise ValueError(f"unexpected curve CSV header {header}")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        s = data[:, 0]
        ds = (s[-1] - s[0]) / (len(s) - 1)
        return cls(data[:, 1:], s0=s[0], ds=ds)

    def to_json(self) -> str:
        return json.dumps({"s0": self.s0, "ds": self.ds, "points": self.points.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "SampledCurve":
        obj = json.loads(text)
        if isinstance(obj, list):
            return cls(np.array(obj))
        return cls(np.array(obj["points"]), s0=obj.get("s0", 0.0), ds=obj.get("ds", 1.0))


def lift_integrand(xy: np.ndarray, ds: float) -> np.ndarray:
    """Samples of 2 (x' y - y' x) with centered differences (second-order one-sided at ends)."""
    edge = 2 if len(xy) >= 3 else 1
    dx = np.gradient(xy[:, 0], ds, edge_order=edge)
    dy = np.gradient(xy[:, 1], ds, edge_order=edge)
    return 2.0 * (dx * xy[:, 1] - dy * xy[:, 0])


def horizontal_lift(kappa: SampledCurve, t0: float) -> SampledCurve:
    """Horizontal lift of a plane curve starting at height ``t0``."""
    xy = kappa.points[:, :2]
    t = t0 + cumulative_trapezoid(lift_integrand(xy, kappa.ds), dx=kappa.ds, initial=0.0)
    return SampledCurve(np.column_stack([xy, t]), kappa.s0, kappa.ds)


def is_horizontal(curve: SampledCurve, tol: float) -> bool:
    """True when re-lifting the projection reproduces the third coordinate within ``tol``."""
    if curve.dim != 3:
        raise ValueError("horizontality needs a space curve")
    relift = horizontal_lift(curve.projection(), curve.points[0, 2])
    return float(np.max(np.abs(relift.points[:, 2] - curve.points[:, 2]))) <= tol


def sr_length(curve: SampledCurve) -> float:
    """Sub-Riemannian length: Euclidean length of the horizontal projection (polygonal)."""
    d = np.diff(curve.points[:, :2], axis=0)
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def translate_curve(p: HPoint, curve: SampledCurve) -> SampledCurve:
    """Left translation ``p . gamma`` of a space curve."""
    if curve.dim != 3:
        raise ValueError("left translation acts on space curves")
    pts = mul_arrays(np.broadcast_to(p.as_array(), curve.points.shape), curve.points)
    return SampledCurve(pts, curve.s0, curve.ds)

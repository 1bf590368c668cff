"""Numerical geometry of the first Heisenberg group and its isoperimetric bubble."""

from .bodies import ConvexBody, load_body, make_bubble, make_candidate
from .core import HPoint, SampledCurve, dilate, group_inv, group_mul
from .geodesics import cc_distance, geodesic_curve, solve_arc
from .measure import measure_body, minkowski_content

__all__ = [
    "ConvexBody", "HPoint", "SampledCurve", "cc_distance", "dilate", "geodesic_curve", "group_inv",
    "group_mul", "load_body", "make_bubble", "make_candidate", "measure_body", "minkowski_content", "solve_arc",
]

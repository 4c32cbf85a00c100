"""
Planar grillage tensor measures induced by three-marginal plans.

Every plan atom (x, y, z) with weight w contributes two bars: [z, x] with
sign +1 and [z, y] with sign -1, each carrying the density
sign * w * |xi - z| * u u^T (u the unit bar direction) along the segment.
Pairing with a test function phi, a bar gives
sign * w * (Dphi(e)(e - z) - phi(e) + phi(z)), so for an admissible plan the
grillage has second divergence nu - mu.

Usage:
  g = bars_from_plan(plan)
  tv = total_variation(g)
  report = verify_div2(g, mu, nu, degree=4)
  svg_text = export(g, "svg")
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple
import logging
import math
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd

from beckmann_solver import ThreePlan
from core_measures import (FLOAT_TOL, DiscreteMeasure, NumericMode, Scalar, check_same_space,
                           format_scalar, norm_sq, to_scalar, zeros)
from errors import DimensionMismatchError

logger = logging.getLogger(__name__)

VERIFY_DEGREE = 4
SVG_SIZE = 600
SVG_MARGIN = 20
MAX_STROKE = 8.0
MIN_STROKE = 0.5
SVG_SEGMENTS = 8
SIGN_COLORS = {1: "#c0392b", -1: "#2c6fbb"}
LINE_ROUND_DECIMALS = 12


@dataclass(frozen=True, eq=False)
class GrillageBar:
    """Segment from z to e with signed linear density"""
    start: np.ndarray
    end: np.ndarray
    sign: int
    weight: Scalar
    mode: NumericMode

    @property
    def vector(self) -> np.ndarray:
        return self.end - self.start

    @property
    def length_sq(self) -> Scalar:
        return norm_sq(self.vector)

    @property
    def mass(self) -> Scalar:
        """weight * |e - z|^2 / 2"""
        return self.weight * self.length_sq / 2

    def direction_tensor(self) -> np.ndarray:
        v = self.vector
        return np.outer(v, v) / self.length_sq

    def pairing(self, exponents: Tuple[int, int]) -> Scalar:
        """sign * w * int_0^1 t g''(t) dt with g(t) = phi(z + t (e - z)), phi a monomial"""
        coeffs = _restricted_monomial(self.start, self.vector, exponents, self.mode)
        # t g''(t) = sum k (k - 1) c_k t^(k-1), which integrates to sum (k - 1) c_k
        total = zeros((), self.mode)[()]
        for k, c in enumerate(coeffs[2:], start=2):
            total = total + c * (k - 1)
        return self.sign * self.weight * total

    def to_row(self) -> Dict[str, Any]:
        return {"x1": format_scalar(self.start[0]), "y1": format_scalar(self.start[1]),
                "x2": format_scalar(self.end[0]), "y2": format_scalar(self.end[1]),
                "sign": self.sign, "weight": format_scalar(self.weight), "mass": format_scalar(self.mass)}


@dataclass
class GrillageMeasure:
    bars: List[GrillageBar] = field(default_factory=list)
    mode: NumericMode = NumericMode.RATIONAL
    dim: int = 2

    def __len__(self) -> int:
        return len(self.bars)

    def total_mass(self) -> Scalar:
        return sum((b.mass for b in self.bars), zeros((), self.mode)[()])


def _poly_mul(a: List[Scalar], b: List[Scalar]) -> List[Scalar]:
    out = [a[0] * 0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] = out[i + j] + x * y
    return out


def _restricted_monomial(z: np.ndarray, d: np.ndarray, exponents: Tuple[int, int],
                         mode: NumericMode) -> List[Scalar]:
    """Coefficients of t -> prod_i (z_i + t d_i)^a_i"""
    one = to_scalar(1, mode)
    coeffs = [one]
    for zi, di, a in zip(z, d, exponents):
        for _ in range(a):
            coeffs = _poly_mul(coeffs, [zi, di])
    return coeffs


def monomial_exponents(degree: int) -> List[Tuple[int, int]]:
    """(a, b) with a + b <= degree, by total degree then a"""
    return [(a, total - a) for total in range(degree + 1) for a in range(total, -1, -1)]


def monomial(point: np.ndarray, exponents: Tuple[int, int]) -> Scalar:
    out = point[0] ** 0
    for v, a in zip(point, exponents):
        out = out * v ** a
    return out


def monomial_gradient(point: np.ndarray, exponents: Tuple[int, int]) -> List[Scalar]:
    grad = []
    for i in range(len(exponents)):
        e = list(exponents)
        if e[i] == 0:
            grad.append(point[0] * 0)
            continue
        factor = e[i]
        e[i] -= 1
        grad.append(factor * monomial(point, tuple(e)))
    return grad


def telescoped_pairing(bar: GrillageBar, exponents: Tuple[int, int]) -> Scalar:
    """sign * w * (Dphi(e)(e - z) - phi(e) + phi(z))"""
    grad = monomial_gradient(bar.end, exponents)
    directional = sum((g * v for g, v in zip(grad, bar.vector)), bar.end[0] * 0)
    return bar.sign * bar.weight * (directional - monomial(bar.end, exponents) + monomial(bar.start, exponents))


def bars_from_plan(plan: ThreePlan) -> GrillageMeasure:
    """Two bars per triple (+ towards x, - towards y); zero-length segments dropped"""
    if plan.dim != 2:
        raise DimensionMismatchError(f"Grillage needs a planar plan, got dimension {plan.dim}")
    bars = []
    for x, y, z, w in plan.atoms():
        for end, sign in ((x, 1), (y, -1)):
            if any(end != z):
                bars.append(GrillageBar(start=z, end=end, sign=sign, weight=w, mode=plan.mode))
    logger.info(f"Grillage with {len(bars)} bars from {plan.size} plan atoms")
    return GrillageMeasure(bars=bars, mode=plan.mode)


def _line_key(bar: GrillageBar) -> Tuple[Tuple, Scalar, np.ndarray]:
    """(key, |d'|^2, d') with d' the direction scaled to first nonzero component 1"""
    v = bar.vector
    lead = v[0] if v[0] != 0 else v[1]
    d = v / lead
    normal = np.array([-d[1], d[0]], dtype=d.dtype)
    offset = normal @ bar.start
    if bar.mode == NumericMode.RATIONAL:
        key = (tuple(d.tolist()), offset)
    else:
        key = (tuple(np.round(d.astype(float), LINE_ROUND_DECIMALS) + 0.0),
               round(float(offset), LINE_ROUND_DECIMALS) + 0.0)
    return key, norm_sq(d), d


def _abs_integral(a: Scalar, b: Scalar, s0: Scalar, s1: Scalar) -> Scalar:
    """int_s0^s1 |a s + b| ds, split at the root"""
    def F(s):
        return a * s * s / 2 + b * s

    if a != 0:
        r = -b / a
        if s0 < r < s1:
            return abs(F(r) - F(s0)) + abs(F(s1) - F(r))
    return abs(F(s1) - F(s0))


@dataclass
class TotalVariationReport:
    total: Scalar
    lines: int
    merged_lines: int
    near_collinear: int
    cancelled: Scalar

    def to_dict(self) -> Dict[str, Any]:
        return {"total_variation": format_scalar(self.total), "lines": self.lines,
                "merged_lines": self.merged_lines, "near_collinear_pairs": self.near_collinear,
                "cancelled_mass": format_scalar(self.cancelled)}


def total_variation_report(g: GrillageMeasure) -> TotalVariationReport:
    """Schatten-1 total variation, merging bars only on exactly shared carrying lines"""
    zero = zeros((), g.mode)[()]
    groups: Dict[Tuple, List[Tuple[GrillageBar, np.ndarray]]] = {}
    scales: Dict[Tuple, Scalar] = {}
    for bar in g.bars:
        key, scale, d = _line_key(bar)
        groups.setdefault(key, []).append((bar, d))
        scales[key] = scale

    total = zero
    merged = 0
    for key, members in groups.items():
        if len(members) > 1:
            merged += 1
        # Each bar: density sign * w * |s - s_z| on [min(s_z, s_e), max(s_z, s_e)]
        pieces = []
        breaks = set()
        for bar, d in members:
            s_z, s_e = d @ bar.start, d @ bar.end
            orient = 1 if s_e > s_z else -1
            a = bar.sign * bar.weight * orient
            pieces.append((min(s_z, s_e), max(s_z, s_e), a, -a * s_z))
            breaks.update((s_z, s_e))
        points = sorted(breaks)
        line_total = zero
        for s0, s1 in zip(points, points[1:]):
            a = sum((p[2] for p in pieces if p[0] <= s0 and s1 <= p[1]), zero)
            b = sum((p[3] for p in pieces if p[0] <= s0 and s1 <= p[1]), zero)
            line_total = line_total + _abs_integral(a, b, s0, s1)
        total = total + line_total / scales[key]

    keys = list(groups)
    near = 0
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            di = np.array(keys[i][0], dtype=float)
            dj = np.array(keys[j][0], dtype=float)
            gap = float(np.max(np.abs(di - dj))) + abs(float(keys[i][1]) - float(keys[j][1]))
            if 0 < gap <= FLOAT_TOL:
                near += 1
    if near:
        logger.warning(f"{near} pairs of near-collinear grillage lines were kept separate")
    return TotalVariationReport(total=total, lines=len(groups), merged_lines=merged,
                                near_collinear=near, cancelled=g.total_mass() - total)


def total_variation(g: GrillageMeasure) -> Scalar:
    return total_variation_report(g).total


@dataclass
class Div2Report:
    degree: int
    residuals: Dict[Tuple[int, int], Scalar]

    @property
    def max_residual(self) -> Scalar:
        return max(self.residuals.values())

    def to_dict(self) -> Dict[str, Any]:
        return {"degree": self.degree, "max_residual": format_scalar(self.max_residual),
                "residuals": {f"x^{a} y^{b}": format_scalar(r) for (a, b), r in self.residuals.items()}}


def verify_div2(g: GrillageMeasure, mu: DiscreteMeasure, nu: DiscreteMeasure,
                degree: int = VERIFY_DEGREE) -> Div2Report:
    """|int <D^2 phi, d rho> - int phi d(nu - mu)| for every monomial of degree <= degree"""
    if degree < 2:
        raise ValueError(f"Verification degree must be at least 2, got {degree}")
    check_same_space(mu, nu)
    if mu.dim != 2:
        raise DimensionMismatchError(f"Grillage verification needs planar measures, got R^{mu.dim}")
    residuals = {}
    for exponents in monomial_exponents(degree):
        lhs = sum((bar.pairing(exponents) for bar in g.bars), zeros((), g.mode)[()])
        rhs = nu.integrate(lambda p: monomial(p, exponents)) - mu.integrate(lambda p: monomial(p, exponents))
        residuals[exponents] = abs(lhs - rhs)
    report = Div2Report(degree, residuals)
    logger.info(f"div^2 check up to degree {degree}: max residual {format_scalar(report.max_residual)}")
    return report


def to_frame(g: GrillageMeasure) -> pd.DataFrame:
    columns = ["x1", "y1", "x2", "y2", "sign", "weight", "mass"]
    return pd.DataFrame([bar.to_row() for bar in g.bars], columns=columns)


def to_svg(g: GrillageMeasure, size: int = SVG_SIZE, margin: int = SVG_MARGIN,
           max_stroke: float = MAX_STROKE, segments: int = SVG_SEGMENTS) -> str:
    """
    Each bar is drawn as `segments` consecutive <line> pieces from z to e.
    A piece's stroke width is proportional to the density w |p - z| at its
    midpoint, so bars taper to nothing at z.
    """
    if segments < 1:
        raise ValueError(f"Need at least one segment per bar, got {segments}")
    svg = ET.Element("svg", {"xmlns": "http://www.w3.org/2000/svg", "width": str(size),
                             "height": str(size), "viewBox": f"0 0 {size} {size}"})
    if g.bars:
        pts = np.array([[float(v) for v in p] for bar in g.bars for p in (bar.start, bar.end)])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = float(max(hi - lo)) or 1.0
        scale = (size - 2 * margin) / span
        peaks = [float(bar.weight) * math.sqrt(float(bar.length_sq)) for bar in g.bars]
        # Densest drawn piece: the last one of the bar with the largest peak
        top = (max(peaks) or 1.0) * (segments - 0.5) / segments

        def px(p):
            return (margin + (float(p[0]) - lo[0]) * scale, size - margin - (float(p[1]) - lo[1]) * scale)

        for index, (bar, peak) in enumerate(zip(g.bars, peaks)):
            start = np.array([float(v) for v in bar.start])
            step = np.array([float(v) for v in bar.vector]) / segments
            for k in range(segments):
                (x1, y1), (x2, y2) = px(start + k * step), px(start + (k + 1) * step)
                density = peak * (k + 0.5) / segments
                ET.SubElement(svg, "line", {
                    "x1": f"{x1:.3f}", "y1": f"{y1:.3f}", "x2": f"{x2:.3f}", "y2": f"{y2:.3f}",
                    "stroke": SIGN_COLORS[bar.sign],
                    "stroke-width": f"{max(MIN_STROKE, max_stroke * density / top):.3f}",
                    "stroke-linecap": "butt",
                    "data-bar": str(index),
                })
    return ET.tostring(svg, encoding="unicode") + "\n"


def export(g: GrillageMeasure, fmt: str, **options) -> str:
    """Render as 'svg' or 'csv' text"""
    if fmt == "svg":
        return to_svg(g, **options)
    if fmt == "csv":
        return to_frame(g).to_csv(index=False)
    raise ValueError(f"Unknown export format {fmt!r} (expected svg or csv)")

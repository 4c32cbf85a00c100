"""
Strassen-type order tests and bimartingale couplings between discrete measures.

check_convex_order solves the martingale-coupling feasibility LP; with a
subspace pair (V1, V2), find_bimartingale solves the two-sided barycentric
LP whose feasibility is equivalent to mu preceding nu in convex-concave order.
Among feasible couplings the LP picks the one minimising sum pi |x - y|^2.

Pushforwards stay in ambient coordinates: (P_V1, P_V1)_# pi is a coupling of
points of R^n lying in V1.

Usage:
  witness = check_convex_order(mu, nu)
  pi = find_bimartingale(mu, nu, pair)
  report = verify_bimartingale(pi, pair)
"""

from dataclasses import dataclass
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
import logging

import numpy as np

from core_measures import (FLOAT_TOL, DiscreteMeasure, NumericMode, Scalar, _freeze, barycenter,
                           check_same_space, format_scalar, format_vector, is_zero, max_abs,
                           norm_sq, point_key, require_common_barycenter, to_scalar, vector, zeros)
from errors import DimensionMismatchError, PreconditionError
from linalg_spectral import SubspacePair, identity
from lp_solver import LPBuilder, Relation, solve_lp

logger = logging.getLogger(__name__)

SPOT_CHECK_COUNT = 50


@dataclass(frozen=True, eq=False)
class Coupling:
    """Weighted pairs (x, y); marginals are implied"""
    sources: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    mode: NumericMode

    @classmethod
    def from_atoms(cls, atoms: Iterable[Tuple[Tuple[Sequence[Any], Sequence[Any]], Any]],
                   mode: NumericMode) -> "Coupling":
        """Build from ((x, y), w) triples; equal pairs merge, zero weights drop"""
        merged: Dict[Tuple, int] = {}
        xs: List[np.ndarray] = []
        ys: List[np.ndarray] = []
        ws: List[Scalar] = []
        for (raw_x, raw_y), raw_w in atoms:
            x, y = vector(raw_x, mode), vector(raw_y, mode)
            w = to_scalar(raw_w, mode)
            if len(x) != len(y):
                raise DimensionMismatchError(f"Coupling atom pairs R^{len(x)} with R^{len(y)}")
            if w < 0:
                raise ValueError(f"Negative coupling weight {w}")
            if w == 0:
                continue
            key = (point_key(x), point_key(y)) if mode == NumericMode.RATIONAL else \
                (tuple(np.round(x, 12)), tuple(np.round(y, 12)))
            if key in merged:
                ws[merged[key]] += w
                continue
            merged[key] = len(ws)
            xs.append(x)
            ys.append(y)
            ws.append(w)
        if not ws:
            raise ValueError("Coupling has no atoms")
        dtype = float if mode == NumericMode.FLOAT else object
        dim = len(xs[0])
        return cls(sources=_freeze(np.array(xs, dtype=dtype).reshape(len(xs), dim)),
                   targets=_freeze(np.array(ys, dtype=dtype).reshape(len(ys), dim)),
                   weights=_freeze(np.array(ws, dtype=dtype)), mode=mode)

    @classmethod
    def identity(cls, mu: DiscreteMeasure) -> "Coupling":
        """pi = sum w_i delta_(x_i, x_i)"""
        return cls.from_atoms((((p, p), w) for p, w in mu.atoms()), mu.mode)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.sources.shape[1]

    @property
    def total_mass(self) -> Scalar:
        return sum(self.weights[1:], self.weights[0])

    def atoms(self) -> Iterator[Tuple[np.ndarray, np.ndarray, Scalar]]:
        for k in range(self.size):
            yield self.sources[k], self.targets[k], self.weights[k]

    def first_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_atoms(((x, w) for x, _, w in self.atoms()), self.mode, normalize=False)

    def second_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_atoms(((y, w) for _, y, w in self.atoms()), self.mode, normalize=False)

    def pushforward(self, f, g) -> "Coupling":
        """(f, g)_# pi"""
        return Coupling.from_atoms((((f(x), g(y)), w) for x, y, w in self.atoms()), self.mode)

    def swapped(self) -> "Coupling":
        return Coupling(sources=self.targets, targets=self.sources, weights=self.weights, mode=self.mode)

    def martingale_residuals(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per distinct source x: sum over its atoms of w (y - x)"""
        first = self.first_marginal()
        residuals = zeros((first.size, self.dim), self.mode)
        for x, y, w in self.atoms():
            residuals[_locate(first.points, x, self.mode)] += w * (y - x)
        return first.points, residuals

    def martingale_violation(self) -> Scalar:
        """Largest |sum w (y - x)| entry over the sources"""
        _, residuals = self.martingale_residuals()
        return max_abs(residuals)

    def is_martingale(self, tol: float = FLOAT_TOL) -> bool:
        return is_zero(self.martingale_violation(), self.mode, tol)

    def has_marginals(self, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = FLOAT_TOL) -> bool:
        return self.first_marginal().same_as(mu, tol) and self.second_marginal().same_as(nu, tol)

    def to_records(self) -> List[Dict[str, Any]]:
        return [{"x": format_vector(x), "y": format_vector(y), "w": format_scalar(w)}
                for x, y, w in self.atoms()]


def _locate(points: np.ndarray, p: np.ndarray, mode: NumericMode) -> int:
    """Index of p among points (exact in rational mode, nearest in float mode)"""
    if mode == NumericMode.RATIONAL:
        key = point_key(p)
        for i, q in enumerate(points):
            if point_key(q) == key:
                return i
        raise KeyError(f"Point {key} not found")
    return int(np.argmin(np.linalg.norm(points.astype(float) - p.astype(float), axis=1)))


@dataclass
class BimartingaleResidual:
    """Residual vectors of both barycentric conditions"""
    source_points: np.ndarray
    source_residuals: np.ndarray
    target_points: np.ndarray
    target_residuals: np.ndarray
    mode: NumericMode

    @property
    def violation(self) -> Scalar:
        return max(max_abs(self.source_residuals), max_abs(self.target_residuals))

    def worst_atom(self) -> Tuple[str, np.ndarray]:
        """('x' or 'y', point) with the largest residual component"""
        best_side, best_point, best_value = "x", self.source_points[0], None
        for side, points, residuals in (("x", self.source_points, self.source_residuals),
                                        ("y", self.target_points, self.target_residuals)):
            for p, r in zip(points, residuals):
                value = max_abs(r)
                if best_value is None or value > best_value:
                    best_side, best_point, best_value = side, p, value
        return best_side, best_point

    def to_dict(self) -> Dict[str, Any]:
        return {
            "violation": format_scalar(self.violation),
            "source": [{"x": format_vector(p), "residual": format_vector(r)}
                       for p, r in zip(self.source_points, self.source_residuals)],
            "target": [{"y": format_vector(p), "residual": format_vector(r)}
                       for p, r in zip(self.target_points, self.target_residuals)],
        }


def _coupling_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, p1: np.ndarray,
                 p2: Optional[np.ndarray], name: str, **solver_options) -> Optional[Coupling]:
    """
    Feasibility LP over pi_ij >= 0 with marginal rows plus
      sum_j pi_ij P1 (y_j - x_i) = 0 for every i
      sum_i pi_ij P2 (x_i - y_j) = 0 for every j (when P2 is given)
    """
    mode = mu.mode
    lp = LPBuilder(mode, name=name)
    cols = np.empty((mu.size, nu.size), dtype=int)
    for i, x in enumerate(mu.points):
        for j, y in enumerate(nu.points):
            cols[i, j] = lp.add_variable(cost=norm_sq(x - y), name=f"pi_{i}_{j}")

    for i in range(mu.size):
        lp.add_constraint({int(cols[i, j]): 1 for j in range(nu.size)}, Relation.EQ, mu.weights[i], f"mu_{i}")
    for j in range(nu.size):
        lp.add_constraint({int(cols[i, j]): 1 for i in range(mu.size)}, Relation.EQ, nu.weights[j], f"nu_{j}")

    def add_barycentric_rows(projector, outer, inner, outer_is_source):
        for a, base in enumerate(outer):
            moved = [projector @ (q - base) for q in inner]
            for d in range(mu.dim):
                coeffs = {}
                for b, v in enumerate(moved):
                    if v[d] != 0:
                        col = cols[a, b] if outer_is_source else cols[b, a]
                        coeffs[int(col)] = v[d]
                if coeffs:
                    side = "x" if outer_is_source else "y"
                    lp.add_constraint(coeffs, Relation.EQ, 0, f"bary_{side}{a}_{d}")

    add_barycentric_rows(p1, mu.points, nu.points, True)
    if p2 is not None:
        add_barycentric_rows(p2, nu.points, mu.points, False)

    outcome = solve_lp(lp.build(), **solver_options)
    if not outcome.optimal:
        logger.info(f"{name}: no coupling ({outcome.status})")
        return None
    atoms = [((mu.points[i], nu.points[j]), outcome.solution[cols[i, j]])
             for i in range(mu.size) for j in range(nu.size)]
    return Coupling.from_atoms(atoms, mode)


def check_convex_order(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = FLOAT_TOL,
                       **solver_options) -> Optional[Coupling]:
    """Martingale coupling witness of mu <=_c nu, or None"""
    check_same_space(mu, nu)
    gap = barycenter(mu) - barycenter(nu)
    if not is_zero(max_abs(gap), mu.mode, tol):
        logger.info(f"Convex order fails: barycenters differ by {format_vector(gap)}")
        return None
    if mu.same_as(nu, tol):
        return Coupling.identity(mu)
    witness = _coupling_lp(mu, nu, identity(mu.dim, mu.mode), None, "strassen", **solver_options)
    logger.info(f"Convex order {'holds' if witness is not None else 'fails'} "
                f"({mu.size} -> {nu.size} atoms)")
    return witness


def find_bimartingale(mu: DiscreteMeasure, nu: DiscreteMeasure, pair: SubspacePair,
                      tol: float = FLOAT_TOL, **solver_options) -> Optional[Coupling]:
    """Bimartingale coupling for the complementing pair (V1, V2), or None"""
    check_same_space(mu, nu)
    if pair.dim != mu.dim:
        raise DimensionMismatchError(f"Subspace pair lives in R^{pair.dim}, measures in R^{mu.dim}")
    if not pair.complementing:
        raise PreconditionError(
            f"Subspaces do not complement R^{pair.dim}: dim V1 = {pair.dim1}, dim V2 = {pair.dim2}; "
            f"restrict to the leaf tangent space or complete the pair first"
        )
    require_common_barycenter(mu, nu, tol)
    if mu.same_as(nu, tol):
        return Coupling.identity(mu)
    witness = _coupling_lp(mu, nu, pair.proj1, pair.proj2, "bimartingale", **solver_options)
    logger.info(f"Bimartingale coupling {'found' if witness is not None else 'absent'} "
                f"(dim V1 = {pair.dim1}, dim V2 = {pair.dim2})")
    return witness


def verify_bimartingale(pi: Coupling, pair: SubspacePair) -> BimartingaleResidual:
    """Per-atom residuals of sum pi P1 (y - x) and sum pi P2 (x - y)"""
    first, second = pi.first_marginal(), pi.second_marginal()
    src = zeros((first.size, pi.dim), pi.mode)
    tgt = zeros((second.size, pi.dim), pi.mode)
    for x, y, w in pi.atoms():
        src[_locate(first.points, x, pi.mode)] += w * (pair.proj1 @ (y - x))
        tgt[_locate(second.points, y, pi.mode)] += w * (pair.proj2 @ (x - y))
    report = BimartingaleResidual(first.points, src, second.points, tgt, pi.mode)
    logger.debug(f"Bimartingale violation {format_scalar(report.violation)}")
    return report


def marginal_martingale_pushforwards(pi: Coupling, pair: SubspacePair) -> Tuple[Coupling, Coupling]:
    """(P_V1, P_V1)_# pi and the swapped (P_V2 y, P_V2 x) pushforward"""
    p1, p2 = pair.proj1, pair.proj2
    first = pi.pushforward(lambda x: p1 @ x, lambda y: p1 @ y)
    second = Coupling.from_atoms((((p2 @ y, p2 @ x), w) for x, y, w in pi.atoms()), pi.mode)
    return first, second


def bimartingale_cost(pi: Coupling) -> Scalar:
    """1/2 sum pi |x - y|^2"""
    total = zeros((), pi.mode)[()]
    for x, y, w in pi.atoms():
        total = total + w * norm_sq(x - y)
    return total / 2


def projected_convex_order_precheck(mu: DiscreteMeasure, nu: DiscreteMeasure, pair: SubspacePair,
                                    tol: float = FLOAT_TOL, **solver_options) -> Dict[str, bool]:
    """Necessary conditions (P_V1)#mu <=_c (P_V1)#nu and (P_V2)#nu <=_c (P_V2)#mu"""
    p1, p2 = pair.proj1, pair.proj2
    v1 = check_convex_order(mu.pushforward(lambda x: p1 @ x), nu.pushforward(lambda y: p1 @ y),
                            tol=tol, **solver_options) is not None
    v2 = check_convex_order(nu.pushforward(lambda y: p2 @ y), mu.pushforward(lambda x: p2 @ x),
                            tol=tol, **solver_options) is not None
    if not (v1 and v2):
        logger.info(f"Projected precheck fails: V1 side {v1}, V2 side {v2}")
    return {"v1": v1, "v2": v2, "passed": v1 and v2}


@dataclass
class SpotCheck:
    """One convex-concave test function f with its integrals"""
    seed: int
    integral_mu: Scalar
    integral_nu: Scalar
    mode: NumericMode

    @property
    def holds(self) -> bool:
        gap = self.integral_nu - self.integral_mu
        return gap >= 0 if self.mode == NumericMode.RATIONAL else gap >= -FLOAT_TOL


class ConvexConcaveFunction:
    """
    f(v) = g1(P1 v) - g2(P2 v) + <P1 v, M P2 v>

    g1, g2 are sums of a * max(0, <w, u> - t)^2 plus a * |u|^2 with integer
    data, so f is convex along V1, concave along V2 and exact in rational mode.
    """

    def __init__(self, pair: SubspacePair, rng: np.random.Generator, pieces: int = 3):
        self.pair = pair
        mode = pair.mode
        n = pair.dim

        def draw_piece(projector):
            w = projector @ vector(rng.integers(-2, 3, size=n), mode)
            return (to_scalar(int(rng.integers(1, 4)), mode), w, to_scalar(int(rng.integers(-2, 3)), mode))

        self.pieces1 = [draw_piece(pair.proj1) for _ in range(pieces)]
        self.pieces2 = [draw_piece(pair.proj2) for _ in range(pieces)]
        self.quad1 = to_scalar(int(rng.integers(0, 3)), mode)
        self.quad2 = to_scalar(int(rng.integers(0, 3)), mode)
        raw = rng.integers(-2, 3, size=(n, n))
        self.bilinear = np.array([[to_scalar(int(v), mode) for v in row] for row in raw],
                                 dtype=float if mode == NumericMode.FLOAT else object)

    @staticmethod
    def _convex_part(u: np.ndarray, pieces, quad) -> Scalar:
        total = quad * norm_sq(u)
        for a, w, t in pieces:
            s = w @ u - t
            if s > 0:
                total = total + a * s * s
        return total

    def __call__(self, v: np.ndarray) -> Scalar:
        u1, u2 = self.pair.proj1 @ v, self.pair.proj2 @ v
        return (self._convex_part(u1, self.pieces1, self.quad1)
                - self._convex_part(u2, self.pieces2, self.quad2)
                + u1 @ (self.bilinear @ u2))


def convex_concave_spot_check(mu: DiscreteMeasure, nu: DiscreteMeasure, pair: SubspacePair,
                              count: int = SPOT_CHECK_COUNT, seed: int = 0) -> List[SpotCheck]:
    """Integrals of random convex-concave test functions against mu and nu"""
    check_same_space(mu, nu)
    checks = []
    for k in range(count):
        f = ConvexConcaveFunction(pair, np.random.default_rng(seed + k))
        checks.append(SpotCheck(seed + k, mu.integrate(f), nu.integrate(f), mu.mode))
    failures = sum(1 for c in checks if not c.holds)
    if failures:
        logger.info(f"Convex-concave spot check: {failures}/{count} test functions separate mu from nu")
    return checks

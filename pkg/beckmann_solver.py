"""
Discrete second-order Beckmann problem: primal plans, quadratic dual bounds,
plan assembly from bimartingale couplings and optimality verification.

The primal is the three-marginal LP over sigma(x_i, y_j, z_k) >= 0 with
marginals mu and nu and martingale rows E[z | x] = x, E[z | y] = y, for the
cost 1/2 (|z - x|^2 + |z - y|^2). z ranges over a finite grid, so its value
is an upper bound on the continuous optimum; the quadratic potential
u(v) = 1/2 <(P_V1 - P_V2) v, v> gives the matching lower bound.

Usage:
  grid = build_z_grid(mu, nu, pair, product_points=True)
  report = solve_primal(mu, nu, grid)
  print(report.primal_cost, report.dual_bound, report.gap)
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd

from core_measures import (FLOAT_TOL, DiscreteMeasure, NumericMode, Scalar, SymmetricMatrix, _freeze,
                           barycenter, check_same_space, covariance_difference, format_scalar,
                           format_vector, is_zero, max_abs, norm_sq, point_key,
                           require_common_barycenter, to_scalar, variance, vector, zeros)
from errors import DimensionMismatchError, InfeasibleGridError, PreconditionError
from linalg_spectral import SubspacePair, eigendecompose, schatten1, split_subspaces
from lp_solver import LPBuilder, Relation, solve_lp
from order_checks import Coupling, verify_bimartingale

logger = logging.getLogger(__name__)

GRID_ROUND_DECIMALS = 12
GAP_HINT = "non-isometric regime: decompose first"


def cost(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> Scalar:
    """c(x, y, z) = 1/2 (|z - x|^2 + |z - y|^2)"""
    if not len(x) == len(y) == len(z):
        raise DimensionMismatchError(f"cost() on points of dimensions {len(x)}, {len(y)}, {len(z)}")
    return (norm_sq(z - x) + norm_sq(z - y)) / 2


@dataclass(frozen=True, eq=False)
class ThreePlan:
    """Weighted triples (x, y, z)"""
    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    weights: np.ndarray
    mode: NumericMode

    @classmethod
    def from_atoms(cls, atoms: Iterable[Tuple[Tuple[Any, Any, Any], Any]], mode: NumericMode) -> "ThreePlan":
        """Build from ((x, y, z), w); equal triples merge, zero weights drop"""
        index: Dict[Tuple, int] = {}
        rows: List[List[np.ndarray]] = []
        ws: List[Scalar] = []
        for (raw_x, raw_y, raw_z), raw_w in atoms:
            x, y, z = vector(raw_x, mode), vector(raw_y, mode), vector(raw_z, mode)
            w = to_scalar(raw_w, mode)
            if not len(x) == len(y) == len(z):
                raise DimensionMismatchError("Plan atom with points of different dimensions")
            if w < 0:
                raise ValueError(f"Negative plan weight {w}")
            if w == 0:
                continue
            key = tuple(_grid_key(p, mode) for p in (x, y, z))
            if key in index:
                ws[index[key]] += w
                continue
            index[key] = len(ws)
            rows.append([x, y, z])
            ws.append(w)
        if not ws:
            raise ValueError("Plan has no atoms")
        dtype = float if mode == NumericMode.FLOAT else object
        dim = len(rows[0][0])

        def stack(k):
            return _freeze(np.array([r[k] for r in rows], dtype=dtype).reshape(len(rows), dim))

        return cls(stack(0), stack(1), stack(2), _freeze(np.array(ws, dtype=dtype)), mode)

    @classmethod
    def diagonal(cls, mu: DiscreteMeasure) -> "ThreePlan":
        """sigma = sum w_i delta_(x_i, x_i, x_i)"""
        return cls.from_atoms((((p, p, p), w) for p, w in mu.atoms()), mu.mode)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    def atoms(self) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray, Scalar]]:
        for k in range(self.size):
            yield self.xs[k], self.ys[k], self.zs[k], self.weights[k]

    def marginal(self, k: Union[int, Tuple[int, int]]) -> Union[DiscreteMeasure, Coupling]:
        """P_1, P_2, P_3 as measures; (1, 3) and (2, 3) as couplings"""
        columns = {1: self.xs, 2: self.ys, 3: self.zs}
        if isinstance(k, tuple):
            if k not in ((1, 3), (2, 3)):
                raise ValueError(f"Unsupported pair marginal {k}")
            a, b = columns[k[0]], columns[k[1]]
            return Coupling.from_atoms((((a[i], b[i]), self.weights[i]) for i in range(self.size)), self.mode)
        if k not in columns:
            raise ValueError(f"Unsupported marginal {k}")
        pts = columns[k]
        return DiscreteMeasure.from_atoms(((pts[i], self.weights[i]) for i in range(self.size)),
                                          self.mode, normalize=False)

    def total_cost(self) -> Scalar:
        total = zeros((), self.mode)[()]
        for x, y, z, w in self.atoms():
            total = total + w * cost(x, y, z)
        return total

    def martingale_violation(self) -> Scalar:
        """Largest component of sum w (z - x) per x-atom and sum w (z - y) per y-atom"""
        _, rx = self.marginal((1, 3)).martingale_residuals()
        _, ry = self.marginal((2, 3)).martingale_residuals()
        return max(max_abs(rx), max_abs(ry))

    def is_admissible(self, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = FLOAT_TOL) -> bool:
        """Marginals are mu and nu and both martingale conditions hold"""
        return (self.marginal(1).same_as(mu, tol) and self.marginal(2).same_as(nu, tol)
                and is_zero(self.martingale_violation(), self.mode, tol))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for x, y, z, w in self.atoms():
            row: Dict[str, Any] = {}
            for label, p in (("x", x), ("y", y), ("z", z)):
                for d, v in enumerate(p):
                    row[f"{label}{d}"] = format_scalar(v)
            row["weight"] = format_scalar(w)
            row["cost"] = format_scalar(cost(x, y, z))
            rows.append(row)
        return pd.DataFrame(rows)

    def to_records(self) -> List[Dict[str, Any]]:
        return [{"x": format_vector(x), "y": format_vector(y), "z": format_vector(z), "w": format_scalar(w)}
                for x, y, z, w in self.atoms()]


@dataclass(frozen=True, eq=False)
class QuadraticPotential:
    """u(v) = 1/2 <A v, v> + <linear, v> + constant with -Id <= A <= Id"""
    A: SymmetricMatrix
    linear: np.ndarray
    constant: Scalar = 0

    def __post_init__(self):
        if len(self.linear) != self.A.dim:
            raise DimensionMismatchError(f"Linear part in R^{len(self.linear)}, A is {self.A.dim}x{self.A.dim}")
        values = eigendecompose(self.A).eigenvalues
        if len(values) and (values.max() > 1 + FLOAT_TOL or values.min() < -1 - FLOAT_TOL):
            raise PreconditionError(
                f"Potential derivative is not 1-Lipschitz: eigenvalues in [{values.min():.6g}, {values.max():.6g}]"
            )

    @classmethod
    def from_pair(cls, pair: SubspacePair) -> "QuadraticPotential":
        """u_{V1,V2}(v) = 1/2 |P_V1 v|^2 - 1/2 |P_V2 v|^2"""
        return cls(SymmetricMatrix(entries=pair.isometry(), mode=pair.mode), zeros(pair.dim, pair.mode),
                   to_scalar(0, pair.mode))

    @classmethod
    def zero(cls, dim: int, mode: NumericMode) -> "QuadraticPotential":
        return cls(SymmetricMatrix.zeros(dim, mode), zeros(dim, mode), to_scalar(0, mode))

    @property
    def mode(self) -> NumericMode:
        return self.A.mode

    def __call__(self, v: np.ndarray) -> Scalar:
        return self.A.quadratic_form(v) / 2 + self.linear @ v + self.constant

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return self.A.apply(v) + self.linear

    def dual_objective(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> Scalar:
        """int u d(nu - mu)"""
        return nu.integrate(self) - mu.integrate(self)

    def to_dict(self) -> Dict[str, Any]:
        return {"A": [format_vector(row) for row in self.A.entries], "linear": format_vector(self.linear),
                "constant": format_scalar(self.constant)}


@dataclass
class OptimalityReport:
    """Per-atom complementary slackness and isometry identities of a plan against u"""
    residuals: List[Scalar]
    isometry_gaps_y: List[Scalar]
    isometry_gaps_x: List[Scalar]
    weighted_residual: Scalar

    @property
    def max_residual(self) -> Scalar:
        return max(abs(r) for r in self.residuals)

    @property
    def max_isometry_gap(self) -> Scalar:
        return max(abs(g) for g in self.isometry_gaps_y + self.isometry_gaps_x)

    def to_dict(self) -> Dict[str, Any]:
        return {"max_residual": format_scalar(self.max_residual),
                "weighted_residual": format_scalar(self.weighted_residual),
                "max_isometry_gap": format_scalar(self.max_isometry_gap),
                "residuals": [format_scalar(r) for r in self.residuals]}


def check_optimality(plan: ThreePlan, potential: QuadraticPotential) -> OptimalityReport:
    """
    Per atom: cost - [u(y) + Du(y)(z - y) - u(x) - Du(x)(z - x)].

    Each residual is >= 0 for a 1-Lipschitz-derivative u; the weighted sum is
    the duality gap, and all residuals vanish exactly for a jointly optimal pair.
    """
    residuals, gaps_y, gaps_x = [], [], []
    weighted = zeros((), plan.mode)[()]
    for x, y, z, w in plan.atoms():
        du_x, du_y, du_z = potential.gradient(x), potential.gradient(y), potential.gradient(z)
        bound = potential(y) + du_y @ (z - y) - potential(x) - du_x @ (z - x)
        r = cost(x, y, z) - bound
        residuals.append(r)
        weighted = weighted + w * r
        gaps_y.append(norm_sq(du_y - du_z) - norm_sq(y - z))
        gaps_x.append(norm_sq(du_x - du_z) - norm_sq(x - z))
    report = OptimalityReport(residuals, gaps_y, gaps_x, weighted)
    logger.debug(f"Optimality residual max {format_scalar(report.max_residual)}")
    return report


def _grid_key(p: np.ndarray, mode: NumericMode) -> Tuple:
    if mode == NumericMode.RATIONAL:
        return point_key(p)
    return tuple(np.round(p.astype(float), GRID_ROUND_DECIMALS) + 0.0)


@dataclass
class ZGrid:
    """Candidate z locations with the source that first produced each point"""
    points: List[np.ndarray] = field(default_factory=list)
    sources: List[str] = field(default_factory=list)
    mode: NumericMode = NumericMode.RATIONAL
    _seen: Dict[Tuple, int] = field(default_factory=dict, repr=False)

    def add(self, point: np.ndarray, source: str) -> None:
        key = _grid_key(point, self.mode)
        if key not in self._seen:
            self._seen[key] = len(self.points)
            self.points.append(point)
            self.sources.append(source)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.points)

    def provenance(self) -> Dict[str, Any]:
        counts: Dict[str, int] = {}
        for s in self.sources:
            counts[s] = counts.get(s, 0) + 1
        return {"size": len(self), "sources": counts}


def build_z_grid(mu: DiscreteMeasure, nu: DiscreteMeasure, pair: Optional[SubspacePair] = None,
                 extra: Optional[Sequence[Sequence[Any]]] = None, product_points: bool = False,
                 kernel_completions: bool = True) -> ZGrid:
    """
    Deduplicated candidates in this order: P_V2 x + P_V1 y (structured), the two
    kernel completions when V1 + V2 misses a kernel, atoms of mu and nu,
    x + y - b (product), user extras.
    """
    check_same_space(mu, nu)
    grid = ZGrid(mode=mu.mode)
    if pair is not None:
        if pair.dim != mu.dim:
            raise DimensionMismatchError(f"Subspace pair lives in R^{pair.dim}, measures in R^{mu.dim}")
        for x in mu.points:
            for y in nu.points:
                grid.add(pair.proj2 @ x + pair.proj1 @ y, "structured")
        if kernel_completions and not pair.complementing:
            pk = pair.projector("kernel")
            for x in mu.points:
                for y in nu.points:
                    base = pair.proj2 @ x + pair.proj1 @ y
                    grid.add(base + pk @ x, "structured")
                    grid.add(base + pk @ y, "structured")
    for p in mu.points:
        grid.add(p, "atoms")
    for p in nu.points:
        grid.add(p, "atoms")
    if product_points:
        b = barycenter(mu)
        for x in mu.points:
            for y in nu.points:
                grid.add(x + y - b, "product")
    for raw in extra or []:
        p = vector(raw, mu.mode)
        if len(p) != mu.dim:
            raise DimensionMismatchError(f"Grid point {list(raw)} is not in R^{mu.dim}")
        grid.add(p, "user")
    logger.info(f"z grid: {grid.provenance()}")
    return grid


def _as_points(z_grid: Union[ZGrid, Sequence[Any]], mode: NumericMode) -> List[np.ndarray]:
    if isinstance(z_grid, ZGrid):
        return list(z_grid.points)
    return [vector(p, mode) for p in z_grid]


def subspace_dual_value(C: SymmetricMatrix, pair: SubspacePair) -> Scalar:
    """1/2 tr((P_W1 - P_W2) C): the dual objective of u_{W1,W2}"""
    return np.trace(pair.isometry() @ C.entries) / 2


def quadratic_dual_bound(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: Optional[float] = None,
                         **split_options) -> Tuple[Scalar, QuadraticPotential, SubspacePair]:
    """1/2 |C|_1 with C = cov(nu) - cov(mu), attained by u_{V1,V2} for the sign split of C"""
    require_common_barycenter(mu, nu)
    C = covariance_difference(mu, nu)
    pair, _ = split_subspaces(C, tol=tol, **split_options)
    value = schatten1(C, pair if pair.exact or C.mode == NumericMode.FLOAT else None) / 2
    logger.info(f"Quadratic dual bound {format_scalar(value)} (dim V1 = {pair.dim1}, dim V2 = {pair.dim2})")
    return value, QuadraticPotential.from_pair(pair), pair


def is_optimal_pair(C: SymmetricMatrix, pair: SubspacePair, tol: float = FLOAT_TOL) -> bool:
    """u_{W1,W2} attains 1/2 |C|_1, i.e. W1 contains V1 and W2 contains V2"""
    return is_zero(subspace_dual_value(C, pair) - schatten1(C) / 2, C.mode, tol)


@dataclass
class SolveReport:
    """Both bound sides of one primal solve"""
    primal_cost: Scalar
    dual_bound: Scalar
    gap: Scalar
    plan: ThreePlan
    potential: QuadraticPotential
    optimality_residual: Scalar
    z_grid_size: int
    pair: Optional[SubspacePair] = None
    grid: Optional[Dict[str, Any]] = None
    iterations: int = 0
    perturbed: bool = False

    @property
    def tight(self) -> bool:
        return is_zero(self.gap, self.plan.mode)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "primal_cost": format_scalar(self.primal_cost),
            "dual_bound": format_scalar(self.dual_bound),
            "gap": format_scalar(self.gap),
            "optimality_residual": format_scalar(self.optimality_residual),
            "z_grid_size": self.z_grid_size,
            "grid": self.grid,
            "plan": self.plan.to_records(),
            "potential": self.potential.to_dict(),
            "lp": {"iterations": self.iterations, "perturbed": self.perturbed},
        }
        if self.pair is not None:
            out["subspaces"] = {"dim_v1": self.pair.dim1, "dim_v2": self.pair.dim2, "exact": self.pair.exact}
        if not self.tight:
            out["note"] = GAP_HINT
        return out


def _add_martingale_rows(lp: LPBuilder, groups: Sequence[Sequence[Tuple[int, np.ndarray]]],
                         anchors: Sequence[np.ndarray], label: str) -> None:
    """For anchor a and its (column, z) list: sum sigma (z - a) = 0 per coordinate"""
    for a, (anchor, members) in enumerate(zip(anchors, groups)):
        for d in range(len(anchor)):
            coeffs = {}
            for col, z in members:
                delta = z[d] - anchor[d]
                if delta != 0:
                    coeffs[col] = delta
            if coeffs:
                lp.add_constraint(coeffs, Relation.EQ, 0, f"mart_{label}{a}_{d}")


def solve_primal(mu: DiscreteMeasure, nu: DiscreteMeasure, z_grid: Union[ZGrid, Sequence[Any]],
                 split_tol: Optional[float] = None, split_options: Optional[Dict[str, Any]] = None,
                 **solver_options) -> SolveReport:
    """Minimise sum sigma c over Sigma(mu, nu) restricted to the grid"""
    require_common_barycenter(mu, nu)
    mode = mu.mode
    points = _as_points(z_grid, mode)
    provenance = z_grid.provenance() if isinstance(z_grid, ZGrid) else {"size": len(points), "sources": {"user": len(points)}}
    if not points:
        raise PreconditionError("z grid is empty")

    dual, potential, pair = quadratic_dual_bound(mu, nu, tol=split_tol, **(split_options or {}))

    if mu.same_as(nu):
        plan = ThreePlan.diagonal(mu)
        return SolveReport(primal_cost=plan.total_cost(), dual_bound=dual, gap=plan.total_cost() - dual,
                           plan=plan, potential=potential,
                           optimality_residual=check_optimality(plan, potential).max_residual,
                           z_grid_size=len(points), pair=pair, grid=provenance)

    lp = LPBuilder(mode, name="primal")
    cols = {}
    by_x: List[List[Tuple[int, np.ndarray]]] = [[] for _ in range(mu.size)]
    by_y: List[List[Tuple[int, np.ndarray]]] = [[] for _ in range(nu.size)]
    for i, x in enumerate(mu.points):
        for j, y in enumerate(nu.points):
            for k, z in enumerate(points):
                col = lp.add_variable(cost=cost(x, y, z), name=f"s_{i}_{j}_{k}")
                cols[i, j, k] = col
                by_x[i].append((col, z))
                by_y[j].append((col, z))

    for i in range(mu.size):
        lp.add_constraint({col: 1 for col, _ in by_x[i]}, Relation.EQ, mu.weights[i], f"mu_{i}")
    for j in range(nu.size):
        lp.add_constraint({col: 1 for col, _ in by_y[j]}, Relation.EQ, nu.weights[j], f"nu_{j}")
    _add_martingale_rows(lp, by_x, mu.points, "x")
    _add_martingale_rows(lp, by_y, nu.points, "y")

    outcome = solve_lp(lp.build(), **solver_options)
    if not outcome.optimal:
        raise InfeasibleGridError("primal", len(points))

    plan = ThreePlan.from_atoms((((mu.points[i], nu.points[j], points[k]), outcome.solution[col])
                                 for (i, j, k), col in cols.items()), mode)
    primal = plan.total_cost()
    gap = primal - dual
    residual = check_optimality(plan, potential).max_residual
    logger.info(f"Primal {format_scalar(primal)}, dual bound {format_scalar(dual)}, gap {format_scalar(gap)}")
    if not is_zero(gap, mode):
        logger.info(GAP_HINT)
    return SolveReport(primal_cost=primal, dual_bound=dual, gap=gap, plan=plan, potential=potential,
                       optimality_residual=residual, z_grid_size=len(points), pair=pair, grid=provenance,
                       iterations=outcome.iterations, perturbed=outcome.perturbed)


def assemble_from_bimartingale(pi: Coupling, pair: SubspacePair, tol: float = FLOAT_TOL) -> ThreePlan:
    """sigma = R_# pi with R(x, y) = (x, y, P_V2 x + P_V1 y)"""
    if not pair.complementing:
        raise PreconditionError(f"Plan assembly needs complementing subspaces (dim V1 = {pair.dim1}, "
                                f"dim V2 = {pair.dim2}, n = {pair.dim})")
    report = verify_bimartingale(pi, pair)
    if not is_zero(report.violation, pi.mode, tol):
        side, point = report.worst_atom()
        raise PreconditionError(
            f"Coupling is not bimartingale: residual {format_scalar(report.violation)} at {side} = {format_vector(point)}"
        )
    return ThreePlan.from_atoms((((x, y, pair.proj2 @ x + pair.proj1 @ y), w) for x, y, w in pi.atoms()),
                                pi.mode)


def solve_variance(mu: DiscreteMeasure, nu: DiscreteMeasure, z_grid: Union[ZGrid, Sequence[Any]],
                   **solver_options) -> Tuple[Scalar, DiscreteMeasure]:
    """
    Minimise int |z - b|^2 d rho over rho on the grid dominating mu and nu in
    convex order. Two martingale coupling blocks pi1(x, z), pi2(y, z) share
    their z-marginal rho.
    """
    b = require_common_barycenter(mu, nu)
    mode = mu.mode
    points = _as_points(z_grid, mode)
    if not points:
        raise PreconditionError("z grid is empty")

    lp = LPBuilder(mode, name="variance")
    first = [[lp.add_variable(cost=norm_sq(z - b), name=f"p_{i}_{k}") for k, z in enumerate(points)]
             for i in range(mu.size)]
    second = [[lp.add_variable(cost=0, name=f"q_{j}_{k}") for k in range(len(points))]
              for j in range(nu.size)]

    for i in range(mu.size):
        lp.add_constraint({c: 1 for c in first[i]}, Relation.EQ, mu.weights[i], f"mu_{i}")
    for j in range(nu.size):
        lp.add_constraint({c: 1 for c in second[j]}, Relation.EQ, nu.weights[j], f"nu_{j}")
    for k in range(len(points)):
        coeffs = {first[i][k]: 1 for i in range(mu.size)}
        coeffs.update({second[j][k]: -1 for j in range(nu.size)})
        lp.add_constraint(coeffs, Relation.EQ, 0, f"rho_{k}")
    _add_martingale_rows(lp, [list(zip(first[i], points)) for i in range(mu.size)], mu.points, "x")
    _add_martingale_rows(lp, [list(zip(second[j], points)) for j in range(nu.size)], nu.points, "y")

    outcome = solve_lp(lp.build(), **solver_options)
    if not outcome.optimal:
        raise InfeasibleGridError("variance", len(points))
    rho = DiscreteMeasure.from_atoms(((z, sum((outcome.solution[first[i][k]] for i in range(mu.size)),
                                              zeros((), mode)[()]))
                                      for k, z in enumerate(points)), mode, dim=mu.dim)
    value = outcome.objective
    logger.info(f"Variance problem value {format_scalar(value)} with {rho.size} atoms in rho")
    return value, rho


def variance_identity_gap(primal_cost: Scalar, variance_value: Scalar,
                          mu: DiscreteMeasure, nu: DiscreteMeasure) -> Scalar:
    """J - (V - 1/2 (var mu + var nu)); zero when both used the same grid"""
    return primal_cost - (variance_value - (variance(mu) + variance(nu)) / 2)


def balance_check(plan: ThreePlan, transport_set_key: Callable[[np.ndarray], bool]) -> Tuple[Scalar, np.ndarray]:
    """(|mu(A) - nu(A)|, int_A x dmu - int_A y dnu) read off the plan's first two marginals"""
    mass = zeros((), plan.mode)[()]
    moment = zeros(plan.dim, plan.mode)
    for x, y, _, w in plan.atoms():
        if transport_set_key(x):
            mass = mass + w
            moment = moment + w * x
        if transport_set_key(y):
            mass = mass - w
            moment = moment - w * y
    return abs(mass), moment

"""
Self-contained two-phase simplex over exact rationals or floats.

Float mode runs a dense float64 tableau with Dantzig's rule and
smallest-index tie-breaks; if it stalls in a run of degenerate pivots it
perturbs the right-hand side deterministically, switches to Bland's rule and
flags the outcome.

Rational mode warm-starts from the final float basis and finishes with a
revised simplex that keeps B^-1 as exact fractions. Float reduced costs only
preselect entering columns; every pivot and the optimality verdict are exact.
Long degenerate runs switch the exact pricing to Bland's rule.

Equality rows stay equalities: every row gets an explicit artificial
variable, and the artificial columns double as B^-1 for dual recovery.

Usage:
  lp = LPBuilder(NumericMode.RATIONAL)
  x = lp.add_variable(cost=1, name="x")
  lp.add_constraint({x: 1}, Relation.GE, 3)
  outcome = solve_lp(lp.build())
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from fractions import Fraction
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union
import itertools
import logging

import numpy as np

from core_measures import FLOAT_TOL, NumericMode, Scalar, format_scalar, to_scalar, zeros
from errors import MalformedProgramError, ProblemTooLargeError

logger = logging.getLogger(__name__)

MAX_RATIONAL_NONZEROS = 20_000
MAX_ITERATIONS = 200_000
DEGENERATE_PIVOT_LIMIT = 500
PERTURBATION = 1e-7
PIVOT_TOL = 1e-11
FILTER_TOL = 1e-9


class Relation(str, Enum):
    EQ = "="
    LE = "<="
    GE = ">="


@dataclass(frozen=True)
class Constraint:
    """One row: coefficients (sparse dict or dense sequence), relation, rhs"""
    coefficients: Union[Mapping[int, Scalar], Sequence[Scalar]]
    relation: Relation
    rhs: Scalar
    name: str = ""

    def sparse(self, num_variables: int) -> Dict[int, Scalar]:
        if isinstance(self.coefficients, Mapping):
            for j in self.coefficients:
                if not 0 <= j < num_variables:
                    raise MalformedProgramError(
                        f"Constraint '{self.name}' references column {j}, program has {num_variables}"
                    )
            return {j: v for j, v in self.coefficients.items() if v != 0}
        if len(self.coefficients) != num_variables:
            raise MalformedProgramError(
                f"Constraint '{self.name}' has {len(self.coefficients)} columns, objective has {num_variables}"
            )
        return {j: v for j, v in enumerate(self.coefficients) if v != 0}


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """minimize c^T x subject to rows, 0 <= x <= upper (upper defaults to +inf)"""
    objective: Tuple[Scalar, ...]
    constraints: Tuple[Constraint, ...]
    mode: NumericMode
    upper_bounds: Mapping[int, Scalar] = field(default_factory=dict)
    variable_names: Tuple[str, ...] = ()
    name: str = "lp"

    @property
    def num_variables(self) -> int:
        return len(self.objective)

    def rows(self) -> List[Tuple[Dict[int, Scalar], Relation, Scalar, str]]:
        """Validated sparse rows, including one row per finite upper bound"""
        n = self.num_variables
        out = []
        for k, con in enumerate(self.constraints):
            try:
                relation = Relation(con.relation)
            except ValueError:
                raise MalformedProgramError(f"Unknown relation {con.relation!r} in row {k}")
            out.append((con.sparse(n), relation, to_scalar(con.rhs, self.mode), con.name or f"c{k}"))
        for j, ub in sorted(self.upper_bounds.items()):
            if not 0 <= j < n:
                raise MalformedProgramError(f"Upper bound on unknown column {j}")
            out.append(({j: to_scalar(1, self.mode)}, Relation.LE, to_scalar(ub, self.mode), f"ub{j}"))
        return out

    @property
    def nonzeros(self) -> int:
        n = self.num_variables
        return sum(len(con.sparse(n)) for con in self.constraints)

    def column_name(self, j: int) -> str:
        return self.variable_names[j] if j < len(self.variable_names) else f"x{j}"

    def to_lp_text(self) -> str:
        """Plain-text dump in an LP-file style"""
        def term(coef: Scalar, j: int) -> str:
            return f"{format_scalar(coef)} {self.column_name(j)}"

        lines = [f"\\ {self.name} ({self.mode.value})", "Minimize"]
        obj = [term(c, j) for j, c in enumerate(self.objective) if c != 0]
        lines.append(" obj: " + (" + ".join(obj) if obj else "0"))
        lines.append("Subject To")
        n = self.num_variables
        for k, con in enumerate(self.constraints):
            body = " + ".join(term(c, j) for j, c in sorted(con.sparse(n).items())) or "0"
            lines.append(f" {con.name or f'c{k}'}: {body} {Relation(con.relation).value} {format_scalar(to_scalar(con.rhs, self.mode))}")
        if self.upper_bounds:
            lines.append("Bounds")
            for j, ub in sorted(self.upper_bounds.items()):
                lines.append(f" {self.column_name(j)} <= {format_scalar(ub)}")
        lines.append("End")
        return "\n".join(lines) + "\n"


class LPBuilder:
    """Incremental construction of a LinearProgram"""

    def __init__(self, mode: NumericMode, name: str = "lp"):
        self.mode = mode
        self.name = name
        self._objective: List[Scalar] = []
        self._names: List[str] = []
        self._constraints: List[Constraint] = []
        self._upper: Dict[int, Scalar] = {}

    def add_variable(self, cost: Scalar = 0, name: Optional[str] = None,
                     upper: Optional[Scalar] = None) -> int:
        j = len(self._objective)
        self._objective.append(to_scalar(cost, self.mode))
        self._names.append(name or f"x{j}")
        if upper is not None:
            self._upper[j] = to_scalar(upper, self.mode)
        return j

    def add_constraint(self, coefficients: Mapping[int, Scalar], relation: Relation,
                       rhs: Scalar, name: str = "") -> None:
        coeffs = {j: to_scalar(v, self.mode) for j, v in coefficients.items()}
        self._constraints.append(Constraint(coeffs, relation, to_scalar(rhs, self.mode),
                                            name or f"c{len(self._constraints)}"))

    @property
    def num_variables(self) -> int:
        return len(self._objective)

    def build(self) -> LinearProgram:
        return LinearProgram(objective=tuple(self._objective), constraints=tuple(self._constraints),
                             mode=self.mode, upper_bounds=dict(self._upper),
                             variable_names=tuple(self._names), name=self.name)


@dataclass
class LPOutcome:
    """Result of solve_lp"""
    status: str
    solution: Optional[np.ndarray] = None
    objective: Optional[Scalar] = None
    duals: Optional[np.ndarray] = None
    iterations: int = 0
    perturbed: bool = False
    warm_start: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


_dump_counter = itertools.count()


def dump_program(lp: LinearProgram, directory: str) -> Path:
    """Write the LP-style text of lp into directory (numbered by solve order)"""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{next(_dump_counter):03d}_{lp.name}.lp"
    path.write_text(lp.to_lp_text(), encoding="utf-8")
    logger.debug(f"LP dump written to {path}")
    return path


@dataclass
class _StandardForm:
    """Rows flipped to rhs >= 0 with one slack per inequality; artificial i is the unit column e_i"""
    mode: NumericMode
    num_structural: int
    columns: List[Dict[int, Scalar]]
    costs: List[Scalar]
    rhs: List[Scalar]
    signs: List[int]

    @classmethod
    def from_program(cls, lp: LinearProgram) -> "_StandardForm":
        rows = lp.rows()
        one, zero = to_scalar(1, lp.mode), to_scalar(0, lp.mode)
        columns: List[Dict[int, Scalar]] = [{} for _ in range(lp.num_variables)]
        costs = [to_scalar(c, lp.mode) for c in lp.objective]
        rhs, signs = [], []
        for i, (coeffs, rel, b, _) in enumerate(rows):
            sign = -1 if b < 0 else 1
            for j, v in coeffs.items():
                columns[j][i] = sign * v
            if rel != Relation.EQ:
                columns.append({i: sign * (one if rel == Relation.LE else -one)})
                costs.append(zero)
            rhs.append(sign * b)
            signs.append(sign)
        return cls(lp.mode, lp.num_variables, columns, costs, rhs, signs)

    @property
    def m(self) -> int:
        return len(self.rhs)

    @property
    def width(self) -> int:
        return len(self.columns)

    def dense_float(self) -> np.ndarray:
        a = np.zeros((self.m, self.width))
        for j, col in enumerate(self.columns):
            for i, v in col.items():
                a[i, j] = float(v)
        return a


class _Tableau:
    """Dense float64 tableau; last row holds reduced costs, last column the rhs"""

    def __init__(self, form: _StandardForm, tol: float):
        m, w = form.m, form.width
        self.m, self.width = m, w
        self.art_start = w
        self.tol = tol
        T = np.zeros((m + 1, w + m + 1))
        T[:m, :w] = form.dense_float()
        T[:m, w:w + m] = np.eye(m)
        T[:m, -1] = [float(b) for b in form.rhs]
        self.T = T
        self.rhs = T[:m, -1].copy()
        self.basis: List[int] = list(range(w, w + m))

    def pivot(self, r: int, c: int) -> None:
        T = self.T
        T[r] = T[r] / T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        rows = np.flatnonzero(col)
        if len(rows):
            block = T[rows] - np.outer(col[rows], T[r])
            block[np.abs(block) < 1e-13] = 0.0
            T[rows] = block
        self.basis[r] = c

    def set_costs(self, costs: np.ndarray) -> None:
        """Reduced-cost row for a full cost vector (structural, slack, artificial)"""
        cb = costs[self.basis]
        self.T[self.m] = np.concatenate([costs, [0.0]]) - cb @ self.T[:self.m]

    def choose_entering(self, allowed: int, bland: bool) -> Optional[int]:
        d = self.T[self.m, :allowed]
        negative = np.flatnonzero(d < -self.tol)
        if not len(negative):
            return None
        if bland:
            return int(negative[0])
        return int(negative[np.argmin(d[negative])])

    def choose_leaving(self, c: int) -> Optional[int]:
        a = self.T[:self.m, c]
        rows = np.flatnonzero(a > PIVOT_TOL)
        if not len(rows):
            return None
        ratios = self.T[rows, -1] / a[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        return int(min(ties, key=lambda i: self.basis[i]))


def _run_float(form: _StandardForm, name: str, max_iterations: int, degenerate_pivot_limit: int,
               perturbation: float, tol: float) -> Tuple[str, _Tableau, Dict[str, Any]]:
    """Two float phases; returns the status and the final tableau"""
    tab = _Tableau(form, tol)
    state: Dict[str, Any] = {"iterations": 0, "perturbed": False}

    def run_phase(phase: int) -> str:
        degenerate_run = 0
        use_bland = False
        while True:
            if state["iterations"] >= max_iterations:
                raise RuntimeError(f"LP '{name}' exceeded {max_iterations} simplex iterations")
            c = tab.choose_entering(tab.art_start, use_bland)
            if c is None:
                return "optimal"
            r = tab.choose_leaving(c)
            if r is None:
                return "unbounded"
            degenerate = tab.T[r, -1] <= tol
            tab.pivot(r, c)
            state["iterations"] += 1
            degenerate_run = degenerate_run + 1 if degenerate else 0
            if not use_bland and degenerate_run > degenerate_pivot_limit:
                if phase == 2:
                    # Deterministic rhs perturbation; the final point is recomputed from B^-1 b
                    tab.T[:tab.m, -1] += perturbation * (1.0 + np.arange(tab.m) / max(tab.m, 1))
                    logger.warning(f"LP '{name}': degenerate cycling suspected, rhs perturbed")
                else:
                    logger.warning(f"LP '{name}': degenerate cycling suspected in phase 1")
                state["perturbed"] = True
                use_bland = True

    phase1 = np.concatenate([np.zeros(tab.width), np.ones(tab.m)])
    tab.set_costs(phase1)
    run_phase(1)
    if -tab.T[tab.m, -1] > tol:
        return "infeasible", tab, state

    # Drive zero-level artificials out of the basis where possible
    for i in range(tab.m):
        if tab.basis[i] >= tab.art_start:
            nonzero = np.flatnonzero(np.abs(tab.T[i, :tab.art_start]) > tol)
            if len(nonzero):
                tab.pivot(i, int(nonzero[0]))

    costs = np.concatenate([[float(c) for c in form.costs], np.zeros(tab.m)])
    tab.set_costs(costs)
    return run_phase(2), tab, state


def _float_outcome(lp: LinearProgram, form: _StandardForm, status: str, tab: _Tableau,
                   state: Dict[str, Any]) -> LPOutcome:
    if status != "optimal":
        logger.info(f"LP '{lp.name}' {status}")
        return LPOutcome(status=status, iterations=state["iterations"], perturbed=state["perturbed"])
    binv = tab.T[:tab.m, tab.art_start:tab.art_start + tab.m]
    rhs = binv @ tab.rhs if state["perturbed"] else tab.T[:tab.m, -1]
    x = np.zeros(lp.num_variables)
    for i, b in enumerate(tab.basis):
        if b < lp.num_variables:
            x[b] = max(float(rhs[i]), 0.0)
    objective = float(np.dot([float(c) for c in lp.objective], x)) if lp.num_variables else 0.0
    # y'_i = -(reduced cost of artificial i); undo the row sign flips
    n_user = len(lp.constraints)
    duals = np.array([-tab.T[tab.m, tab.art_start + i] * form.signs[i] for i in range(n_user)], dtype=float)
    logger.debug(f"LP '{lp.name}' optimal after {state['iterations']} pivots, value {objective:.12g}")
    return LPOutcome(status="optimal", solution=x, objective=objective, duals=duals,
                     iterations=state["iterations"], perturbed=state["perturbed"])


class _ExactRevised:
    """
    Revised simplex with an exact basis inverse.

    Reduced costs are estimated in float to preselect entering candidates;
    a column only enters once its exact reduced cost is negative, and
    optimality is declared only after every column the float estimate cannot
    clear has been priced exactly.
    """

    def __init__(self, form: _StandardForm, name: str, max_iterations: int, degenerate_pivot_limit: int):
        self.form = form
        self.name = name
        self.max_iterations = max_iterations
        self.degenerate_pivot_limit = degenerate_pivot_limit
        self.m, self.width = form.m, form.width
        self.a_float = form.dense_float()
        self.a_abs = np.abs(self.a_float)
        self.zero = Fraction(0)
        self.one = Fraction(1)
        self.iterations = 0
        self.basis: List[int] = []
        self.binv: List[List[Fraction]] = []
        self.xb: List[Fraction] = []

    def column(self, j: int) -> Dict[int, Fraction]:
        if j < self.width:
            return self.form.columns[j]
        return {j - self.width: self.one}

    def start_artificial(self) -> None:
        m = self.m
        self.basis = list(range(self.width, self.width + m))
        self.binv = [[self.one if i == k else self.zero for k in range(m)] for i in range(m)]
        self.xb = list(self.form.rhs)

    def start_from(self, basis: Sequence[int]) -> bool:
        """Exact inverse of a proposed basis; False when singular or primal infeasible"""
        m = self.m
        if len(basis) != m or len(set(basis)) != m:
            return False
        aug = [[self.zero] * m + [self.one if i == k else self.zero for k in range(m)] for i in range(m)]
        for k, j in enumerate(basis):
            for i, v in self.column(j).items():
                aug[i][k] = v
        for k in range(m):
            p = next((i for i in range(k, m) if aug[i][k] != 0), None)
            if p is None:
                return False
            aug[k], aug[p] = aug[p], aug[k]
            piv = aug[k][k]
            row_k = [v / piv for v in aug[k]]
            aug[k] = row_k
            for i in range(m):
                f = aug[i][k]
                if i != k and f != 0:
                    aug[i] = [a - f * b if b != 0 else a for a, b in zip(aug[i], row_k)]
        binv = [row[m:] for row in aug]
        xb = [sum((row[r] * b for r, b in enumerate(self.form.rhs) if b != 0), self.zero) for row in binv]
        if any(v < 0 for v in xb):
            return False
        self.basis, self.binv, self.xb = list(basis), binv, xb
        return True

    def duals(self, costs: Sequence[Fraction]) -> List[Fraction]:
        y = [self.zero] * self.m
        for i, b in enumerate(self.basis):
            cb = costs[b]
            if cb != 0:
                row = self.binv[i]
                y = [acc + cb * v if v != 0 else acc for acc, v in zip(y, row)]
        return y

    def reduced_cost(self, j: int, costs: Sequence[Fraction], y: Sequence[Fraction]) -> Fraction:
        return costs[j] - sum((y[i] * v for i, v in self.column(j).items()), self.zero)

    def entering(self, costs: Sequence[Fraction], costs_float: np.ndarray, bland: bool) -> Optional[int]:
        w = self.width
        y = self.duals(costs)
        y_float = np.array([float(v) for v in y])
        estimate = costs_float[:w] - y_float @ self.a_float
        margin = FILTER_TOL * (1.0 + np.abs(costs_float[:w]) + np.abs(y_float) @ self.a_abs)
        basic = set(self.basis)
        # Columns with estimate >= margin are certainly non-negative
        candidates = np.flatnonzero(estimate < margin)
        if not bland:
            candidates = candidates[np.argsort(estimate[candidates], kind="stable")]
        for j in candidates:
            j = int(j)
            if j in basic:
                continue
            if self.reduced_cost(j, costs, y) < 0:
                return j
        return None

    def ftran(self, j: int) -> List[Fraction]:
        alpha = [self.zero] * self.m
        for r, v in self.column(j).items():
            for i in range(self.m):
                entry = self.binv[i][r]
                if entry != 0:
                    alpha[i] += entry * v
        return alpha

    def leaving(self, alpha: Sequence[Fraction]) -> Optional[int]:
        best, best_ratio = None, None
        for i, a in enumerate(alpha):
            if a > 0:
                ratio = self.xb[i] / a
                if (best_ratio is None or ratio < best_ratio
                        or (ratio == best_ratio and self.basis[i] < self.basis[best])):
                    best, best_ratio = i, ratio
        return best

    def pivot(self, r: int, c: int, alpha: Sequence[Fraction]) -> None:
        piv = alpha[r]
        row_r = [v / piv if v != 0 else v for v in self.binv[r]]
        x_r = self.xb[r] / piv
        self.binv[r], self.xb[r] = row_r, x_r
        for i, a in enumerate(alpha):
            if i != r and a != 0:
                self.binv[i] = [v - a * u if u != 0 else v for v, u in zip(self.binv[i], row_r)]
                self.xb[i] -= a * x_r
        self.basis[r] = c

    def run_phase(self, costs: Sequence[Fraction]) -> str:
        costs_float = np.array([float(c) for c in costs])
        degenerate_run = 0
        bland = False
        while True:
            if self.iterations >= self.max_iterations:
                raise RuntimeError(f"LP '{self.name}' exceeded {self.max_iterations} simplex iterations")
            c = self.entering(costs, costs_float, bland)
            if c is None:
                return "optimal"
            alpha = self.ftran(c)
            r = self.leaving(alpha)
            if r is None:
                return "unbounded"
            degenerate = self.xb[r] == 0
            self.pivot(r, c, alpha)
            self.iterations += 1
            degenerate_run = degenerate_run + 1 if degenerate else 0
            if not bland and degenerate_run > self.degenerate_pivot_limit:
                # Bland's rule from here on guarantees termination
                logger.debug(f"LP '{self.name}': switching to Bland's rule after {degenerate_run} degenerate pivots")
                bland = True

    def infeasibility(self) -> Fraction:
        return sum((x for b, x in zip(self.basis, self.xb) if b >= self.width), self.zero)

    def drive_out_artificials(self) -> None:
        for r in range(self.m):
            if self.basis[r] < self.width:
                continue
            rho = self.binv[r]
            rho_float = np.array([float(v) for v in rho])
            order = np.argsort(-np.abs(rho_float @ self.a_float), kind="stable")
            basic = set(self.basis)
            for j in order:
                j = int(j)
                if j in basic:
                    continue
                value = sum((rho[i] * v for i, v in self.column(j).items()), self.zero)
                if value != 0:
                    self.pivot(r, j, self.ftran(j))
                    break


def _solve_exact(lp: LinearProgram, form: _StandardForm, warm_basis: Optional[Sequence[int]],
                 max_iterations: int, degenerate_pivot_limit: int, float_iterations: int) -> LPOutcome:
    solver = _ExactRevised(form, lp.name, max_iterations, degenerate_pivot_limit)
    warm = warm_basis is not None and solver.start_from(warm_basis)
    if not warm:
        if warm_basis is not None:
            logger.debug(f"LP '{lp.name}': float basis rejected, exact solve starts from the artificial basis")
        solver.start_artificial()

    def outcome(status: str, **kwargs) -> LPOutcome:
        return LPOutcome(status=status, iterations=float_iterations + solver.iterations, warm_start=warm, **kwargs)

    w, m = form.width, form.m
    if solver.infeasibility() > 0:
        phase1 = [Fraction(0)] * w + [Fraction(1)] * m
        solver.run_phase(phase1)
        if solver.infeasibility() > 0:
            logger.info(f"LP '{lp.name}' infeasible (phase 1 value {float(solver.infeasibility()):.3e})")
            return outcome("infeasible")
    solver.drive_out_artificials()

    costs = list(form.costs) + [Fraction(0)] * m
    if solver.run_phase(costs) == "unbounded":
        logger.info(f"LP '{lp.name}' unbounded")
        return outcome("unbounded")

    x = zeros(lp.num_variables, lp.mode)
    for b, value in zip(solver.basis, solver.xb):
        if b < lp.num_variables:
            x[b] = value
    objective = sum((c * x[j] for j, c in enumerate(form.costs[:lp.num_variables])), Fraction(0))
    y = solver.duals(costs)
    n_user = len(lp.constraints)
    duals = zeros(n_user, lp.mode)
    for i in range(n_user):
        duals[i] = y[i] * form.signs[i]
    logger.debug(f"LP '{lp.name}' optimal after {solver.iterations} exact pivots "
                 f"({float_iterations} float, warm start {warm}), value {format_scalar(objective)}")
    return outcome("optimal", solution=x, objective=objective, duals=duals)


def solve_lp(lp: LinearProgram, max_rational_nonzeros: int = MAX_RATIONAL_NONZEROS,
             max_iterations: int = MAX_ITERATIONS,
             degenerate_pivot_limit: int = DEGENERATE_PIVOT_LIMIT,
             perturbation: float = PERTURBATION, float_tol: float = FLOAT_TOL,
             dump_dir: Optional[str] = None, warm_start: bool = True) -> LPOutcome:
    """
    Solve min c^T x over the program's rows with x >= 0.

    Float mode runs the dense tableau. Rational mode runs the same tableau in
    float first (unless warm_start is False) and hands its final basis to the
    exact revised simplex, which accepts it only if it is exactly nonsingular
    and primal feasible, then pivots exactly to an exactly optimal basis.
    """
    if dump_dir:
        dump_program(lp, dump_dir)
    nnz = lp.nonzeros
    if lp.mode == NumericMode.RATIONAL and nnz > max_rational_nonzeros:
        raise ProblemTooLargeError(nnz, max_rational_nonzeros)

    form = _StandardForm.from_program(lp)
    logger.info(f"Solving LP '{lp.name}': {lp.num_variables} columns, {form.m} rows, "
                f"{nnz} nonzeros ({lp.mode.value})")

    if lp.mode == NumericMode.FLOAT:
        status, tab, state = _run_float(form, lp.name, max_iterations, degenerate_pivot_limit,
                                        perturbation, float_tol)
        return _float_outcome(lp, form, status, tab, state)

    warm_basis, float_iterations = None, 0
    if warm_start:
        try:
            _, tab, state = _run_float(form, lp.name, max_iterations, degenerate_pivot_limit,
                                       perturbation, float_tol)
            warm_basis, float_iterations = tab.basis, state["iterations"]
        except RuntimeError as e:
            logger.debug(f"Float warm start abandoned: {e}")
    return _solve_exact(lp, form, warm_basis, max_iterations, degenerate_pivot_limit, float_iterations)

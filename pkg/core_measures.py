"""
Discrete probability measures with exact-rational or float weights.

A DiscreteMeasure is a finite list of weighted atoms in R^n. Two numeric modes
exist and are instance-global: exact rationals (fractions.Fraction stored in
numpy object arrays) and float64. Order verdicts are only trustworthy as
ground truth in rational mode.

Usage:
  mu = DiscreteMeasure.from_atoms([((0, 0), 1)], NumericMode.RATIONAL)
  nu = DiscreteMeasure.from_atoms([((-1, 0), "0.5"), ((1, 0), "0.5")], NumericMode.RATIONAL)
  C = covariance_difference(mu, nu)
"""

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from errors import DimensionMismatchError, InvalidMeasureError, PreconditionError

logger = logging.getLogger(__name__)

Scalar = Union[Fraction, float, int]

FLOAT_TOL = 1e-9
DEDUP_TOL = 1e-12
SYMMETRY_TOL = 1e-12


class NumericMode(str, Enum):
    """Instance-global arithmetic"""
    RATIONAL = "rational"
    FLOAT = "float"


def resolve_mode(requested: str, atom_count: int, auto_limit: int = 200) -> NumericMode:
    """Pick the numeric mode; 'auto' means rational up to auto_limit atoms"""
    if requested == "auto":
        mode = NumericMode.RATIONAL if atom_count <= auto_limit else NumericMode.FLOAT
        logger.info(f"Numeric mode auto -> {mode.value} ({atom_count} atoms)")
        return mode
    return NumericMode(requested)


def to_scalar(value: Any, mode: NumericMode) -> Scalar:
    """Convert input numbers (decimal strings, ints, floats, Fractions) to the mode's scalar"""
    if isinstance(value, bool):
        raise TypeError(f"Boolean is not a number: {value!r}")
    if mode == NumericMode.FLOAT:
        return float(Fraction(value)) if isinstance(value, str) else float(value)
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        # Shortest decimal representation, so 0.1 becomes 1/10
        return Fraction(repr(float(value)))
    return Fraction(str(value).strip())


def vector(values: Iterable[Any], mode: NumericMode) -> np.ndarray:
    """Point or vector in the given mode"""
    if mode == NumericMode.FLOAT:
        return np.array([to_scalar(v, mode) for v in values], dtype=float)
    return np.array([to_scalar(v, mode) for v in values], dtype=object)


def zeros(shape: Union[int, Tuple[int, ...]], mode: NumericMode) -> np.ndarray:
    if mode == NumericMode.FLOAT:
        return np.zeros(shape, dtype=float)
    out = np.empty(shape, dtype=object)
    out.fill(Fraction(0))
    return out


def convert_array(values: np.ndarray, mode: NumericMode) -> np.ndarray:
    """Convert an array of numbers to the mode's dtype"""
    arr = np.asarray(values)
    if mode == NumericMode.FLOAT:
        return arr.astype(float)
    flat = [to_scalar(v, mode) for v in arr.ravel()]
    return np.array(flat, dtype=object).reshape(arr.shape)


def is_zero(value: Scalar, mode: NumericMode, tol: float = FLOAT_TOL) -> bool:
    if mode == NumericMode.RATIONAL and isinstance(value, (Fraction, int)):
        return value == 0
    return abs(float(value)) <= tol


def max_abs(values: np.ndarray) -> Scalar:
    """Max-norm of an array (0 for empty arrays), exact for rationals"""
    if values.size == 0:
        return Fraction(0) if values.dtype == object else 0.0
    return max(abs(v) for v in values.ravel())


def norm_sq(v: np.ndarray) -> Scalar:
    return v @ v


def format_scalar(value: Scalar) -> Union[str, float, int]:
    """JSON form of a scalar: exact rationals become 'p/q' strings"""
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return float(value)


def format_vector(values: np.ndarray) -> List[Union[str, float, int]]:
    return [format_scalar(v) for v in values]


def point_key(point: np.ndarray) -> Tuple:
    return tuple(point.tolist())


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely many weighted atoms in R^n (immutable after construction)"""
    points: np.ndarray
    weights: np.ndarray
    mode: NumericMode
    original_mass: Scalar = 1

    @classmethod
    def from_atoms(cls, atoms: Iterable[Tuple[Sequence[Any], Any]], mode: NumericMode,
                   dim: Optional[int] = None, normalize: bool = True,
                   dedup_tol: float = DEDUP_TOL) -> "DiscreteMeasure":
        """Build a measure, merging duplicate atoms and dropping zero weights"""
        merged_points: List[np.ndarray] = []
        merged_weights: List[Scalar] = []
        index: Dict[Tuple, int] = {}

        for raw_point, raw_weight in atoms:
            point = vector(raw_point, mode)
            weight = to_scalar(raw_weight, mode)
            if dim is None:
                dim = len(point)
            if len(point) != dim or dim < 1:
                raise DimensionMismatchError(
                    f"Atom {point_key(point)} has dimension {len(point)}, expected {dim}"
                )
            if weight < 0:
                raise InvalidMeasureError(f"Negative weight {weight} at atom {point_key(point)}")
            if weight == 0:
                continue

            slot = cls._find_slot(point, merged_points, index, mode, dedup_tol)
            if slot is None:
                index[point_key(point)] = len(merged_points)
                merged_points.append(point)
                merged_weights.append(weight)
            else:
                merged_weights[slot] += weight

        if not merged_points:
            raise InvalidMeasureError("Measure has zero total mass")

        total = sum(merged_weights[1:], merged_weights[0])
        if normalize:
            merged_weights = [w / total for w in merged_weights]

        points = np.array(merged_points, dtype=float if mode == NumericMode.FLOAT else object)
        weights = np.array(merged_weights, dtype=float if mode == NumericMode.FLOAT else object)
        return cls(points=_freeze(points.reshape(len(merged_points), dim)),
                   weights=_freeze(weights), mode=mode, original_mass=total)

    @staticmethod
    def _find_slot(point: np.ndarray, existing: List[np.ndarray], index: Dict[Tuple, int],
                   mode: NumericMode, dedup_tol: float) -> Optional[int]:
        if mode == NumericMode.RATIONAL:
            return index.get(point_key(point))
        for slot, other in enumerate(existing):
            if float(np.linalg.norm(other - point)) <= dedup_tol:
                return slot
        return None

    @classmethod
    def dirac(cls, point: Sequence[Any], mode: NumericMode) -> "DiscreteMeasure":
        return cls.from_atoms([(point, 1)], mode)

    @classmethod
    def mixture(cls, parts: Sequence[Tuple[Scalar, "DiscreteMeasure"]],
                mode: NumericMode, normalize: bool = True) -> "DiscreteMeasure":
        """Sum of theta * measure over the parts"""
        atoms = [(point, theta * weight) for theta, part in parts for point, weight in part.atoms()]
        return cls.from_atoms(atoms, mode, normalize=normalize)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def total_mass(self) -> Scalar:
        return sum(self.weights[1:], self.weights[0])

    def atoms(self) -> Iterator[Tuple[np.ndarray, Scalar]]:
        for i in range(self.size):
            yield self.points[i], self.weights[i]

    def weight_at(self, point: Sequence[Any], tol: float = DEDUP_TOL) -> Scalar:
        """Mass of the atom at point (0 when absent)"""
        target = vector(point, self.mode)
        for p, w in self.atoms():
            if self.mode == NumericMode.RATIONAL:
                if point_key(p) == point_key(target):
                    return w
            elif float(np.linalg.norm(p - target)) <= tol:
                return w
        return zeros((), self.mode)[()]

    def integrate(self, fn: Callable[[np.ndarray], Scalar]) -> Scalar:
        """Sum of w * fn(x) over atoms"""
        total = zeros((), self.mode)[()]
        for p, w in self.atoms():
            total = total + w * fn(p)
        return total

    def pushforward(self, fn: Callable[[np.ndarray], np.ndarray]) -> "DiscreteMeasure":
        """Image measure under fn; atoms with equal images are merged"""
        return DiscreteMeasure.from_atoms(((fn(p), w) for p, w in self.atoms()), self.mode,
                                          normalize=False)

    def restricted(self, indices: Sequence[int], normalize: bool = True) -> "DiscreteMeasure":
        """Measure restricted to the given atoms"""
        return DiscreteMeasure.from_atoms(((self.points[i], self.weights[i]) for i in indices),
                                          self.mode, dim=self.dim, normalize=normalize)

    def same_as(self, other: "DiscreteMeasure", tol: float = FLOAT_TOL) -> bool:
        """Atomwise equality (exact in rational mode)"""
        if self.dim != other.dim or self.size != other.size:
            return False
        for p, w in self.atoms():
            if not is_zero(other.weight_at(p) - w, self.mode, tol):
                return False
        return True

    def to_records(self) -> List[Dict[str, Any]]:
        return [{"x": format_vector(p), "w": format_scalar(w)} for p, w in self.atoms()]


@dataclass(frozen=True, eq=False)
class SymmetricMatrix:
    """n x n symmetric matrix in the instance's numeric mode"""
    entries: np.ndarray
    mode: NumericMode

    def __post_init__(self):
        e = self.entries
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"Matrix must be square, got shape {e.shape}")
        if self.mode == NumericMode.RATIONAL:
            if any(e[i, j] != e[j, i] for i in range(e.shape[0]) for j in range(i)):
                raise ValueError("Matrix is not symmetric")
        elif e.size and float(np.max(np.abs(e.astype(float) - e.astype(float).T))) > SYMMETRY_TOL:
            raise ValueError("Matrix is not symmetric within 1e-12")
        _freeze(e)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[Any]], mode: NumericMode) -> "SymmetricMatrix":
        return cls(entries=np.array([vector(r, mode) for r in rows]).reshape(len(rows), len(rows)),
                   mode=mode)

    @classmethod
    def diagonal(cls, values: Sequence[Any], mode: NumericMode) -> "SymmetricMatrix":
        entries = zeros((len(values), len(values)), mode)
        for i, v in enumerate(values):
            entries[i, i] = to_scalar(v, mode)
        return cls(entries=entries, mode=mode)

    @classmethod
    def zeros(cls, dim: int, mode: NumericMode) -> "SymmetricMatrix":
        return cls(entries=zeros((dim, dim), mode), mode=mode)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def as_float(self) -> np.ndarray:
        return self.entries.astype(float)

    def trace(self) -> Scalar:
        return sum((self.entries[i, i] for i in range(self.dim)), zeros((), self.mode)[()])

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.entries @ v

    def quadratic_form(self, v: np.ndarray) -> Scalar:
        return v @ (self.entries @ v)

    def is_zero(self, tol: float = FLOAT_TOL) -> bool:
        return all(is_zero(v, self.mode, tol) for v in self.entries.ravel())


def check_same_space(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    """Both measures live in the same R^n and use the same arithmetic"""
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"Dimension mismatch: mu is in R^{mu.dim}, nu is in R^{nu.dim}")
    if mu.mode != nu.mode:
        raise PreconditionError(f"Numeric mode mismatch: {mu.mode.value} vs {nu.mode.value}")


def barycenter(m: DiscreteMeasure) -> np.ndarray:
    """(sum w_i x_i) / (sum w_i)"""
    total = m.total_mass
    if is_zero(total, m.mode, 0.0):
        raise InvalidMeasureError("Barycenter of a measure with zero total mass")
    return (m.weights @ m.points) / total


def second_moment_matrix(m: DiscreteMeasure) -> np.ndarray:
    """sum w_i x_i x_i^T"""
    scaled = m.points * m.weights[:, None]
    return scaled.T @ m.points


def covariance_difference(mu: DiscreteMeasure, nu: DiscreteMeasure) -> SymmetricMatrix:
    """C = sum_nu w y y^T - sum_mu w x x^T"""
    check_same_space(mu, nu)
    return SymmetricMatrix(entries=second_moment_matrix(nu) - second_moment_matrix(mu), mode=mu.mode)


def variance(m: DiscreteMeasure) -> Scalar:
    """sum w_i |x_i - b|^2 with b the barycenter"""
    centered = m.points - barycenter(m)
    if m.mode == NumericMode.FLOAT:
        return float(m.weights @ np.einsum('ij,ij->i', centered, centered))
    return sum((w * norm_sq(c) for w, c in zip(m.weights, centered)), Fraction(0))


def require_common_barycenter(mu: DiscreteMeasure, nu: DiscreteMeasure,
                              tol: float = FLOAT_TOL) -> np.ndarray:
    """Return the common barycenter or raise PreconditionError"""
    check_same_space(mu, nu)
    b_mu, b_nu = barycenter(mu), barycenter(nu)
    gap = max_abs(b_mu - b_nu)
    if not is_zero(gap, mu.mode, tol):
        raise PreconditionError(
            f"Barycenters differ: mu -> {format_vector(b_mu)}, nu -> {format_vector(b_nu)}"
        )
    return b_mu

"""
Symmetric eigendecomposition, sign-split subspaces, projections and Schatten-1 norms.

Eigenvectors always come from cyclic Jacobi rotations in float64. In rational
mode the orthogonal projectors of the resulting subspaces are snapped to
rationals and accepted only when they are exactly idempotent, symmetric and
mutually orthogonal; otherwise the pair is marked inexact and a warning is
logged.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from core_measures import (
    NumericMode, Scalar, SymmetricMatrix, convert_array, is_zero, to_scalar, zeros,
)
from errors import DimensionMismatchError, PreconditionError

logger = logging.getLogger(__name__)

JACOBI_TOL = 1e-14
MAX_SWEEPS = 100
RELATIVE_SPLIT_TOL = 1e-8
MAX_DENOMINATOR = 1_000_000
ORTHO_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """Descending eigenvalues; eigenvectors are the columns of `eigenvectors`"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return q @ np.diag(self.eigenvalues) @ q.T


def eigendecompose(M: SymmetricMatrix, tol: float = JACOBI_TOL,
                   max_sweeps: int = MAX_SWEEPS) -> EigenDecomposition:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix (float64)"""
    a = M.as_float().copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(a)))

    sweeps = 0
    while sweeps < max_sweeps:
        off = math.sqrt(float(np.sum(a ** 2) - np.sum(np.diag(a) ** 2)))
        if off <= tol * scale:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                g = np.eye(n)
                g[p, p] = c
                g[q, q] = c
                g[p, q] = s
                g[q, p] = -s
                a = g.T @ a @ g
                a[p, q] = a[q, p] = 0.0
                v = v @ g
    else:
        logger.warning(f"Jacobi did not converge in {max_sweeps} sweeps")

    values = np.diag(a).copy()
    order = sorted(range(n), key=lambda i: (-values[i], i))
    values = values[order]
    vectors = v[:, order]
    vectors = _canonical_clusters(values, vectors)
    logger.debug(f"Jacobi: {sweeps} sweeps, eigenvalues {values.tolist()}")
    return EigenDecomposition(eigenvalues=values, eigenvectors=vectors, sweeps=sweeps)


def _canonical_clusters(values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Orthonormalise eigenvectors of (numerically) equal eigenvalues in index order"""
    n = len(values)
    cluster_tol = 1e-12 * max(1.0, float(np.max(np.abs(values))) if n else 1.0)
    out = vectors.copy()
    start = 0
    while start < n:
        end = start + 1
        while end < n and abs(values[end] - values[start]) <= cluster_tol:
            end += 1
        if end - start > 1:
            out[:, start:end] = _canonical_basis(vectors[:, start:end])
        start = end
    for j in range(n):
        col = out[:, j]
        lead = next((x for x in col if abs(x) > 1e-12), 1.0)
        if lead < 0:
            out[:, j] = -col
    return out


def _canonical_basis(span: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis: project e_1, e_2, ... onto the span, Gram-Schmidt"""
    n, k = span.shape
    proj = span @ span.T
    chosen = []
    for i in range(n):
        w = proj[:, i].copy()
        for u in chosen:
            w -= (u @ w) * u
        norm = float(np.linalg.norm(w))
        if norm > 1e-8:
            chosen.append(w / norm)
        if len(chosen) == k:
            break
    return np.array(chosen).T


def _rationalize(values: np.ndarray, max_denominator: int) -> np.ndarray:
    flat = [Fraction(float(x)).limit_denominator(max_denominator) for x in values.ravel()]
    return np.array(flat, dtype=object).reshape(values.shape)


def _exact_projector_ok(p: np.ndarray, rank: int) -> bool:
    n = p.shape[0]
    if any(p[i, j] != p[j, i] for i in range(n) for j in range(i)):
        return False
    if sum(p[i, i] for i in range(n)) != rank:
        return False
    return bool(np.all(p @ p == p))


@dataclass(frozen=True, eq=False)
class SubspacePair:
    """Orthogonal subspaces V1, V2 of R^n with their projectors"""
    basis1: np.ndarray
    basis2: np.ndarray
    dim: int
    mode: NumericMode
    proj1: np.ndarray
    proj2: np.ndarray
    exact: bool = True

    @classmethod
    def from_orthonormal(cls, basis1: np.ndarray, basis2: np.ndarray, dim: int, mode: NumericMode,
                         max_denominator: int = MAX_DENOMINATOR) -> "SubspacePair":
        """Pair from float orthonormal rows (e.g. eigenvectors)"""
        b1 = np.asarray(basis1, dtype=float).reshape(-1, dim)
        b2 = np.asarray(basis2, dtype=float).reshape(-1, dim)
        if b1.shape[0] and b2.shape[0] and float(np.max(np.abs(b1 @ b2.T))) > ORTHO_TOL:
            raise PreconditionError("Subspaces V1 and V2 are not orthogonal")
        if b1.shape[0] + b2.shape[0] > dim:
            raise PreconditionError(f"dim V1 + dim V2 = {b1.shape[0] + b2.shape[0]} exceeds n = {dim}")
        p1, p2 = b1.T @ b1, b2.T @ b2
        if mode == NumericMode.FLOAT:
            return cls(b1, b2, dim, mode, p1, p2, True)

        r1, r2 = _rationalize(p1, max_denominator), _rationalize(p2, max_denominator)
        exact = (_exact_projector_ok(r1, b1.shape[0]) and _exact_projector_ok(r2, b2.shape[0])
                 and bool(np.all(r1 @ r2 == 0)))
        if not exact:
            logger.warning("Subspace projectors are not rational; rational-mode verdicts "
                           "using this pair are approximate")
            r1, r2 = convert_array(p1, mode), convert_array(p2, mode)
        return cls(b1, b2, dim, mode, r1, r2, exact)

    @classmethod
    def from_spanning(cls, vectors1: Sequence[Sequence], vectors2: Sequence[Sequence], dim: int,
                      mode: NumericMode) -> "SubspacePair":
        """Pair from arbitrary spanning vectors (exact Gram-Schmidt in rational mode)"""
        p1, b1 = _span_projector(vectors1, dim, mode)
        p2, b2 = _span_projector(vectors2, dim, mode)
        cross = p1 @ p2
        if not all(is_zero(x, mode) for x in cross.ravel()):
            raise PreconditionError("Subspaces V1 and V2 are not orthogonal")
        return cls(b1, b2, dim, mode, p1, p2, True)

    @classmethod
    def coordinate(cls, dim: int, indices1: Sequence[int], indices2: Sequence[int],
                   mode: NumericMode) -> "SubspacePair":
        """V1, V2 spanned by standard basis vectors"""
        eye = np.eye(dim)
        return cls.from_spanning([eye[i] for i in indices1], [eye[i] for i in indices2], dim, mode)

    @property
    def dim1(self) -> int:
        return self.basis1.shape[0]

    @property
    def dim2(self) -> int:
        return self.basis2.shape[0]

    @property
    def complementing(self) -> bool:
        return self.dim1 + self.dim2 == self.dim

    def projector(self, which: Union[int, str]) -> np.ndarray:
        if which == 1:
            return self.proj1
        if which == 2:
            return self.proj2
        if which == "kernel":
            return identity(self.dim, self.mode) - self.proj1 - self.proj2
        raise ValueError(f"Unknown subspace selector {which!r}")

    def isometry(self) -> np.ndarray:
        """T = P_V1 - P_V2"""
        return self.proj1 - self.proj2

    def kernel_basis(self) -> np.ndarray:
        """Orthonormal rows spanning the complement of V1 + V2"""
        return _projector_basis(self.projector("kernel"), self.dim - self.dim1 - self.dim2)

    def completed(self, into: int = 1) -> "SubspacePair":
        """Complementing pair obtained by absorbing the kernel into V1 or V2"""
        if self.complementing:
            return self
        k = self.kernel_basis()
        pk = self.projector("kernel")
        if into == 1:
            return SubspacePair(np.vstack([self.basis1, k]), self.basis2, self.dim, self.mode,
                                self.proj1 + pk, self.proj2, self.exact)
        return SubspacePair(self.basis1, np.vstack([self.basis2, k]), self.dim, self.mode,
                            self.proj1, self.proj2 + pk, self.exact)

    def swapped(self) -> "SubspacePair":
        return SubspacePair(self.basis2, self.basis1, self.dim, self.mode, self.proj2, self.proj1, self.exact)

    def transformed(self, rotation: np.ndarray) -> "SubspacePair":
        """Image of the pair under an orthogonal map R (projectors R P R^T)"""
        r = convert_array(rotation, self.mode)
        rf = np.asarray(rotation, dtype=float)
        return SubspacePair(self.basis1 @ rf.T, self.basis2 @ rf.T, self.dim, self.mode,
                            r @ self.proj1 @ r.T, r @ self.proj2 @ r.T, self.exact)

    def contains(self, which: int, other: np.ndarray, tol: float = ORTHO_TOL) -> bool:
        """True when the subspace with projector `other` lies inside V_which"""
        p = self.projector(which)
        gap = p @ other - other
        return all(is_zero(x, self.mode, tol) for x in gap.ravel())


def identity(dim: int, mode: NumericMode) -> np.ndarray:
    out = zeros((dim, dim), mode)
    for i in range(dim):
        out[i, i] = to_scalar(1, mode)
    return out


def _span_projector(vectors: Sequence[Sequence], dim: int, mode: NumericMode) -> Tuple[np.ndarray, np.ndarray]:
    """Projector onto span(vectors) via Gram-Schmidt, plus float orthonormal rows"""
    orth = []
    for raw in vectors:
        v = convert_array(np.asarray(raw), mode)
        if len(v) != dim:
            raise DimensionMismatchError(f"Basis vector of length {len(v)} in R^{dim}")
        w = v.copy()
        for u in orth:
            w = w - (u @ w) / (u @ u) * u
        if not all(is_zero(x, mode, ORTHO_TOL) for x in w):
            orth.append(w)
    proj = zeros((dim, dim), mode)
    rows = []
    for w in orth:
        proj = proj + np.outer(w, w) / (w @ w)
        wf = w.astype(float)
        rows.append(wf / np.linalg.norm(wf))
    return proj, np.array(rows, dtype=float).reshape(len(rows), dim)


def _projector_basis(proj: np.ndarray, rank: int) -> np.ndarray:
    n = proj.shape[0]
    if rank <= 0:
        return np.zeros((0, n))
    pf = proj.astype(float)
    decomp = eigendecompose(SymmetricMatrix(entries=(pf + pf.T) / 2, mode=NumericMode.FLOAT))
    return decomp.eigenvectors[:, :rank].T.copy()


def default_split_tol(decomp: EigenDecomposition, relative_tol: float = RELATIVE_SPLIT_TOL) -> float:
    """Kernel threshold relative to the Schatten-1 norm"""
    s1 = float(np.sum(np.abs(decomp.eigenvalues)))
    return relative_tol * s1 if s1 > 0 else relative_tol


def split_subspaces(M: SymmetricMatrix, tol: Optional[float] = None,
                    relative_tol: float = RELATIVE_SPLIT_TOL,
                    max_denominator: int = MAX_DENOMINATOR,
                    decomp: Optional[EigenDecomposition] = None, jacobi_tol: float = JACOBI_TOL,
                    max_sweeps: int = MAX_SWEEPS) -> Tuple[SubspacePair, np.ndarray]:
    """V1 = span(lambda > tol), V2 = span(lambda < -tol), kernel = span(|lambda| <= tol)"""
    if tol is not None and tol <= 0:
        raise ValueError(f"Split tolerance must be positive, got {tol}")
    decomp = decomp or eigendecompose(M, jacobi_tol, max_sweeps)
    tol = tol if tol is not None else default_split_tol(decomp, relative_tol)
    values, vectors = decomp.eigenvalues, decomp.eigenvectors
    pos = [i for i, lam in enumerate(values) if lam > tol]
    neg = [i for i, lam in enumerate(values) if lam < -tol]
    ker = [i for i, lam in enumerate(values) if abs(lam) <= tol]
    pair = SubspacePair.from_orthonormal(vectors[:, pos].T, vectors[:, neg].T, M.dim, M.mode,
                                         max_denominator=max_denominator)
    logger.debug(f"Split at tol {tol:.3e}: dim V1={len(pos)}, dim V2={len(neg)}, kernel={len(ker)}")
    return pair, vectors[:, ker].T.copy()


def spectral_gap(M: SymmetricMatrix, tol: Optional[float] = None,
                 relative_tol: float = RELATIVE_SPLIT_TOL) -> dict:
    """Smallest non-kernel |lambda| and largest kernel |lambda|, for auditing the split"""
    decomp = eigendecompose(M)
    tol = tol if tol is not None else default_split_tol(decomp, relative_tol)
    mags = np.abs(decomp.eigenvalues)
    active = [float(m) for m in mags if m > tol]
    kernel = [float(m) for m in mags if m <= tol]
    return {
        "tol": tol,
        "smallest_active": min(active) if active else None,
        "largest_kernel": max(kernel) if kernel else None,
        "eigenvalues": [float(x) for x in decomp.eigenvalues],
    }


def schatten1(M: SymmetricMatrix, pair: Optional[SubspacePair] = None) -> Scalar:
    """Sum of |eigenvalues|; exact tr((P1 - P2) M) when the sign split is rational"""
    if pair is None:
        decomp = eigendecompose(M)
        if M.mode == NumericMode.FLOAT:
            return float(np.sum(np.abs(decomp.eigenvalues)))
        pair, _ = split_subspaces(M, decomp=decomp)
        if not pair.exact:
            return to_scalar(float(np.sum(np.abs(decomp.eigenvalues))), M.mode)
    t = pair.isometry()
    return np.trace(t @ M.entries)


def project(pair: SubspacePair, which: Union[int, str], x: np.ndarray) -> np.ndarray:
    """Orthogonal projection of x onto V1 (which=1), V2 (which=2) or the kernel"""
    if len(x) != pair.dim:
        raise DimensionMismatchError(f"Point of dimension {len(x)} projected in R^{pair.dim}")
    return pair.projector(which) @ x


def compress(M: SymmetricMatrix, projector: np.ndarray) -> SymmetricMatrix:
    """P M P: M restricted to the range of P, zero on its complement"""
    entries = projector @ M.entries @ projector
    if M.mode == NumericMode.FLOAT:
        entries = (entries + entries.T) / 2
    return SymmetricMatrix(entries=entries, mode=M.mode)

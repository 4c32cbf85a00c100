"""
Tests for the Jacobi eigensolver, sign splits and projector algebra.
"""

from fractions import Fraction

import numpy as np
import pytest

from core_measures import NumericMode, SymmetricMatrix
from errors import PreconditionError
from linalg_spectral import (SubspacePair, compress, eigendecompose, identity, project, schatten1,
                             spectral_gap, split_subspaces)


def rotated(diagonal, rotation, mode=NumericMode.RATIONAL):
    d = SymmetricMatrix.diagonal(diagonal, mode).entries
    return SymmetricMatrix(entries=rotation @ d @ rotation.T, mode=mode)


class TestEigendecompose:
    def test_descending_order(self):
        M = SymmetricMatrix.diagonal([1, 3, -2], NumericMode.FLOAT)
        decomp = eigendecompose(M)
        assert decomp.eigenvalues.tolist() == [3.0, 1.0, -2.0]

    def test_reconstructs_dense_matrix(self, rng):
        a = rng.normal(size=(4, 4))
        M = SymmetricMatrix(entries=a + a.T, mode=NumericMode.FLOAT)
        decomp = eigendecompose(M)
        assert np.allclose(decomp.reconstruct(), M.entries, atol=1e-10)
        assert np.allclose(decomp.eigenvectors.T @ decomp.eigenvectors, np.eye(4), atol=1e-10)

    def test_agrees_with_numpy(self, rng):
        a = rng.normal(size=(5, 5))
        M = SymmetricMatrix(entries=a + a.T, mode=NumericMode.FLOAT)
        expected = sorted(np.linalg.eigvalsh(M.entries), reverse=True)
        assert np.allclose(eigendecompose(M).eigenvalues, expected, atol=1e-10)


class TestSplit:
    def test_axis_split(self, rational):
        pair, kernel = split_subspaces(SymmetricMatrix.diagonal([2, -1, 0], rational))
        assert (pair.dim1, pair.dim2) == (1, 1)
        assert kernel.shape == (1, 3)
        assert pair.proj1[0, 0] == 1 and pair.proj2[1, 1] == 1
        assert pair.exact

    def test_rotated_split_is_exact(self, rational, pythagorean_rotation):
        pair, _ = split_subspaces(rotated([1, -1], pythagorean_rotation))
        assert pair.exact
        assert pair.proj1.tolist() == [[Fraction(9, 25), Fraction(12, 25)], [Fraction(12, 25), Fraction(16, 25)]]
        assert pair.complementing

    def test_schatten1_exact(self, rational, pythagorean_rotation):
        M = rotated([3, -2], pythagorean_rotation)
        assert schatten1(M) == 5

    def test_schatten1_float(self):
        assert schatten1(SymmetricMatrix.diagonal([1.5, -0.5], NumericMode.FLOAT)) == pytest.approx(2.0)

    def test_non_positive_tolerance(self, rational):
        with pytest.raises(ValueError):
            split_subspaces(SymmetricMatrix.diagonal([1], rational), tol=0)

    def test_relative_threshold_sends_tiny_eigenvalues_to_kernel(self):
        pair, kernel = split_subspaces(SymmetricMatrix.diagonal([1.0, 1e-12], NumericMode.FLOAT))
        assert pair.dim1 == 1 and kernel.shape[0] == 1

    def test_spectral_gap_report(self, rational):
        gap = spectral_gap(SymmetricMatrix.diagonal([2, -1, 0], rational))
        assert gap["smallest_active"] == pytest.approx(1.0)
        assert gap["largest_kernel"] == pytest.approx(0.0)


class TestSubspacePair:
    def test_coordinate_projectors(self, rational):
        pair = SubspacePair.coordinate(3, [0], [2], rational)
        kernel = pair.projector("kernel")
        assert kernel[1, 1] == 1 and kernel[0, 0] == 0
        assert not pair.complementing

    def test_completed_absorbs_kernel(self, rational):
        pair = SubspacePair.coordinate(3, [0], [2], rational)
        full = pair.completed(into=1)
        assert full.complementing and full.dim1 == 2
        assert (full.proj1 + full.proj2 == identity(3, rational)).all()
        other = pair.completed(into=2)
        assert other.dim2 == 2

    def test_isometry_squares_to_identity_when_complementing(self, rational):
        pair = SubspacePair.coordinate(2, [1], [0], rational)
        T = pair.isometry()
        assert (T @ T == identity(2, rational)).all()

    def test_swapped(self, rational):
        pair = SubspacePair.coordinate(2, [0], [1], rational).swapped()
        assert pair.proj1[1, 1] == 1

    def test_non_orthogonal_spans(self, rational):
        with pytest.raises(PreconditionError):
            SubspacePair.from_spanning([[1, 0]], [[1, 1]], 2, rational)

    def test_spanning_vectors_need_not_be_orthonormal(self, rational):
        pair = SubspacePair.from_spanning([[2, 0, 0], [1, 1, 0]], [], 3, rational)
        assert pair.dim1 == 2
        assert pair.proj1[1, 1] == 1 and pair.proj1[2, 2] == 0

    def test_transformed(self, rational, pythagorean_rotation):
        pair = SubspacePair.coordinate(2, [0], [1], rational).transformed(pythagorean_rotation)
        assert pair.proj1[0, 0] == Fraction(9, 25)

    def test_contains(self, rational):
        big = SubspacePair.coordinate(3, [0, 1], [2], rational)
        small = SubspacePair.coordinate(3, [1], [], rational)
        assert big.contains(1, small.proj1)
        assert not big.contains(2, small.proj1)

    def test_project_and_compress(self, rational):
        pair = SubspacePair.coordinate(2, [0], [1], rational)
        x = np.array([Fraction(3), Fraction(4)], dtype=object)
        assert project(pair, 2, x).tolist() == [0, 4]
        M = SymmetricMatrix.from_rows([[1, 2], [2, 5]], rational)
        assert compress(M, pair.proj1).entries.tolist() == [[1, 0], [0, 0]]


def random_rotation(rng, dim=3):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def matrix_with_kernel(rng):
    """Q diag(a, -b, 0) Q^T for a random orthogonal Q"""
    q = random_rotation(rng)
    d = np.diag([rng.uniform(0.5, 3.0), -rng.uniform(0.5, 3.0), 0.0])
    return SymmetricMatrix(entries=q @ d @ q.T, mode=NumericMode.FLOAT)


class TestSplitGeometry:
    @pytest.mark.parametrize("seed", range(10))
    def test_pythagoras(self, seed):
        rng = np.random.default_rng(seed)
        pair, kernel = split_subspaces(matrix_with_kernel(rng))
        assert (pair.dim1, pair.dim2, len(kernel)) == (1, 1, 1)
        pk = pair.projector("kernel")
        for x in rng.normal(size=(100, 3)):
            parts = [project(pair, 1, x), project(pair, 2, x), pk @ x]
            assert sum(float(p @ p) for p in parts) == pytest.approx(float(x @ x), abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_isometry_on_the_span(self, seed):
        rng = np.random.default_rng(seed)
        pair, _ = split_subspaces(matrix_with_kernel(rng))
        T = pair.isometry()
        span = pair.proj1 + pair.proj2
        for w in rng.normal(size=(100, 3)):
            v = span @ w
            assert np.linalg.norm(T @ v) == pytest.approx(np.linalg.norm(v), abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_schatten1_is_the_largest_pairing(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(3, 3))
        M = SymmetricMatrix(entries=a + a.T, mode=NumericMode.FLOAT)
        norm = schatten1(M)
        pair, _ = split_subspaces(M)
        assert float(np.trace(pair.isometry() @ M.entries)) == pytest.approx(norm, abs=1e-9)
        for _ in range(200):
            q = random_rotation(rng)
            A = q @ np.diag(rng.uniform(-1.0, 1.0, size=3)) @ q.T
            assert float(np.trace(A @ M.entries)) <= norm + 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_orthogonal_pairs_never_beat_schatten1(self, seed):
        rng = np.random.default_rng(100 + seed)
        a = rng.normal(size=(3, 3))
        M = SymmetricMatrix(entries=a + a.T, mode=NumericMode.FLOAT)
        norm = schatten1(M)
        for _ in range(50):
            q = random_rotation(rng)
            k = int(rng.integers(0, 4))
            cut = int(rng.integers(k, 4))
            pair = SubspacePair.from_orthonormal(q[:, :k].T, q[:, k:cut].T, 3, NumericMode.FLOAT)
            assert float(np.trace(pair.isometry() @ M.entries)) <= norm + 1e-9

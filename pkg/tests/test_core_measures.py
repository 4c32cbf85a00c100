"""
Tests for discrete measures, scalars and covariance differences.
"""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core_measures import (DiscreteMeasure, NumericMode, SymmetricMatrix, barycenter, covariance_difference,
                           format_scalar, require_common_barycenter, resolve_mode, to_scalar, variance)
from errors import DimensionMismatchError, InvalidMeasureError, PreconditionError
from reference_instances import degenerate_covariance, spread_on_line


class TestScalars:
    def test_decimal_strings_are_exact(self):
        assert to_scalar("0.1", NumericMode.RATIONAL) == Fraction(1, 10)
        assert to_scalar("1/3", NumericMode.RATIONAL) == Fraction(1, 3)

    def test_floats_use_shortest_decimal(self):
        assert to_scalar(0.1, NumericMode.RATIONAL) == Fraction(1, 10)

    def test_float_mode_accepts_fraction_strings(self):
        assert to_scalar("1/4", NumericMode.FLOAT) == 0.25

    def test_booleans_are_rejected(self):
        with pytest.raises(TypeError):
            to_scalar(True, NumericMode.RATIONAL)

    def test_format_scalar(self):
        assert format_scalar(Fraction(1, 2)) == "1/2"
        assert format_scalar(Fraction(3)) == "3"
        assert format_scalar(0.5) == 0.5

    @pytest.mark.parametrize("requested,count,expected", [
        ("auto", 10, NumericMode.RATIONAL),
        ("auto", 500, NumericMode.FLOAT),
        ("float", 3, NumericMode.FLOAT),
        ("rational", 5000, NumericMode.RATIONAL),
    ])
    def test_resolve_mode(self, requested, count, expected):
        assert resolve_mode(requested, count, auto_limit=200) == expected


class TestDiscreteMeasure:
    def test_duplicates_merge_and_weights_normalize(self, rational):
        m = DiscreteMeasure.from_atoms([((0, 0), 1), ((0, 0), 1), ((1, 0), 2)], rational)
        assert m.size == 2
        assert m.original_mass == 4
        assert m.weight_at((0, 0)) == Fraction(1, 2)
        assert m.total_mass == 1

    def test_zero_weights_are_dropped(self, rational):
        m = DiscreteMeasure.from_atoms([((0,), 1), ((5,), 0)], rational)
        assert m.size == 1

    def test_float_dedup_tolerance(self):
        m = DiscreteMeasure.from_atoms([((0.0,), 1), ((1e-14,), 1)], NumericMode.FLOAT)
        assert m.size == 1

    def test_negative_weight(self, rational):
        with pytest.raises(InvalidMeasureError):
            DiscreteMeasure.from_atoms([((0,), -1), ((1,), 2)], rational)

    def test_zero_mass(self, rational):
        with pytest.raises(InvalidMeasureError):
            DiscreteMeasure.from_atoms([((0,), 0)], rational)

    def test_dimension_mismatch(self, rational):
        with pytest.raises(DimensionMismatchError):
            DiscreteMeasure.from_atoms([((0, 0), 1), ((1,), 1)], rational)

    def test_same_as_ignores_atom_order(self, rational):
        a = DiscreteMeasure.from_atoms([((0,), 1), ((1,), 1)], rational)
        b = DiscreteMeasure.from_atoms([((1,), 1), ((0,), 1)], rational)
        assert a.same_as(b)

    def test_mixture(self, rational):
        left = DiscreteMeasure.dirac((0,), rational)
        right = DiscreteMeasure.dirac((2,), rational)
        mix = DiscreteMeasure.mixture([(Fraction(1, 4), left), (Fraction(3, 4), right)], rational)
        assert mix.weight_at((2,)) == Fraction(3, 4)

    def test_pushforward_merges_images(self, rational):
        m = DiscreteMeasure.from_atoms([((1, 0), 1), ((1, 5), 1)], rational)
        image = m.pushforward(lambda p: p[:1])
        assert image.size == 1


class TestMoments:
    def test_barycenter(self, rational):
        m = DiscreteMeasure.from_atoms([((0, 0), 1), ((2, 4), 1)], rational)
        assert list(barycenter(m)) == [1, 2]

    def test_spread_covariance(self, rational):
        mu, nu = spread_on_line(rational)
        C = covariance_difference(mu, nu)
        assert C.entries[0, 0] == 1

    def test_degenerate_covariance_is_diagonal(self, rational):
        mu, nu = degenerate_covariance(rational)
        C = covariance_difference(mu, nu)
        assert C.entries.tolist() == [[Fraction(1, 2), 0], [0, 0]]

    def test_variance(self, rational):
        _, nu = spread_on_line(rational)
        assert variance(nu) == 1

    def test_different_barycenters(self, rational):
        mu = DiscreteMeasure.dirac((0,), rational)
        nu = DiscreteMeasure.dirac((1,), rational)
        with pytest.raises(PreconditionError):
            require_common_barycenter(mu, nu)

    def test_mode_mismatch(self, rational):
        mu = DiscreteMeasure.dirac((0,), rational)
        nu = DiscreteMeasure.dirac((0,), NumericMode.FLOAT)
        with pytest.raises(PreconditionError):
            require_common_barycenter(mu, nu)

    def test_asymmetric_matrix(self, rational):
        with pytest.raises(ValueError):
            SymmetricMatrix.from_rows([[1, 2], [3, 4]], rational)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5), st.integers(1, 4)), min_size=1, max_size=5))
    def test_covariance_difference_trace_is_variance_gap(self, atoms):
        mode = NumericMode.RATIONAL
        mu = DiscreteMeasure.from_atoms([((a, b), w) for a, b, w in atoms], mode)
        b = barycenter(mu)
        nu = DiscreteMeasure.from_atoms([(2 * np.array(p) - b, w) for p, w in mu.atoms()] + list(mu.atoms()), mode)
        C = covariance_difference(mu, nu)
        assert C.trace() == variance(nu) - variance(mu)

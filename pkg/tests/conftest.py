"""Shared fixtures for the toolkit tests"""

from fractions import Fraction

import numpy as np
import pytest

from config import Config
from core_measures import NumericMode


@pytest.fixture
def rational():
    return NumericMode.RATIONAL


@pytest.fixture
def config():
    return Config()


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def pythagorean_rotation():
    """Exact rotation by the 3-4-5 angle"""
    return np.array([[Fraction(3, 5), Fraction(-4, 5)], [Fraction(4, 5), Fraction(3, 5)]], dtype=object)

"""
Built-in instances: the two worked planar examples, the one-dimensional
spread, and random generators (forward bimartingale, common barycenter and
stacked leaves with a degenerate covariance difference).

Usage:
  mu, nu = degenerate_covariance(NumericMode.RATIONAL)
  inst = forward_bimartingale(np.random.default_rng(0), dim=2)
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple
import logging

import numpy as np

from core_measures import DiscreteMeasure, NumericMode, barycenter, to_scalar
from linalg_spectral import SubspacePair
from order_checks import Coupling

logger = logging.getLogger(__name__)


def counterexample_measures(mode: NumericMode = NumericMode.RATIONAL) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """mu = 1/2 (d(0,1) + d(0,-1)), nu = 1/2 (d(-1,1) + d(1,-1))"""
    mu = DiscreteMeasure.from_atoms([((0, 1), "1/2"), ((0, -1), "1/2")], mode)
    nu = DiscreteMeasure.from_atoms([((-1, 1), "1/2"), ((1, -1), "1/2")], mode)
    return mu, nu


def counterexample_coupling(mode: NumericMode = NumericMode.RATIONAL) -> Coupling:
    """Martingale pushforwards on both axes, yet not bimartingale"""
    return Coupling.from_atoms([(((0, 1), (-1, 1)), "1/2"), (((0, -1), (1, -1)), "1/2")], mode)


def axis_pair(mode: NumericMode = NumericMode.RATIONAL) -> SubspacePair:
    """V1 = span e1, V2 = span e2 in the plane"""
    return SubspacePair.coordinate(2, [0], [1], mode)


def degenerate_covariance(mode: NumericMode = NumericMode.RATIONAL) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """C = diag(1/2, 0): the instance splits into leaves x2 = 1 and x2 = -1"""
    mu = DiscreteMeasure.from_atoms([((-1, -1), "1/4"), ((1, -1), "1/4"), ((0, 1), "1/2")], mode)
    nu = DiscreteMeasure.from_atoms([((-1, -1), "1/4"), ((1, -1), "1/4"), ((-1, 1), "1/4"), ((1, 1), "1/4")], mode)
    return mu, nu


def spread_on_line(mode: NumericMode = NumericMode.RATIONAL) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """mu = d0, nu = 1/2 (d-1 + d1) on R"""
    return (DiscreteMeasure.dirac((0,), mode),
            DiscreteMeasure.from_atoms([((-1,), "1/2"), ((1,), "1/2")], mode))


@dataclass
class ForwardInstance:
    """Marginals read off a bimartingale coupling built first"""
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    pair: SubspacePair
    coupling: Coupling
    indices1: List[int]
    indices2: List[int]


def forward_bimartingale(rng: np.random.Generator, dim: int = 2, groups: int = 2,
                         mode: NumericMode = NumericMode.RATIONAL) -> ForwardInstance:
    """
    Per centre z with weight w: x = z +- a with a on a V2 axis, y = z +- b
    with b on a V1 axis, coupled independently (w/4 per pair). Group k uses
    axis k mod dim V_i, so C is diagonal and non-degenerate once groups
    cover every axis; the spectral split of C is then exactly (V1, V2).
    """
    dim1 = int(rng.integers(0, dim + 1))
    axes = [int(i) for i in rng.permutation(dim)]
    indices1, indices2 = sorted(axes[:dim1]), sorted(axes[dim1:])
    groups = max(groups, len(indices1), len(indices2), 1)

    atoms = []
    for k in range(groups):
        centre = [int(v) for v in rng.integers(-3, 4, size=dim)]
        weight = to_scalar(int(rng.integers(1, 4)), mode)
        a = [0] * dim
        b = [0] * dim
        if indices2:
            a[indices2[k % len(indices2)]] = int(rng.integers(1, 3))
        if indices1:
            b[indices1[k % len(indices1)]] = int(rng.integers(1, 3))
        for sa in (1, -1):
            for sb in (1, -1):
                x = [c + sa * v for c, v in zip(centre, a)]
                y = [c + sb * v for c, v in zip(centre, b)]
                atoms.append(((x, y), weight / 4))

    total = sum((w for _, w in atoms), to_scalar(0, mode))
    coupling = Coupling.from_atoms([(pts, w / total) for pts, w in atoms], mode)
    pair = SubspacePair.coordinate(dim, indices1, indices2, mode)
    logger.debug(f"Forward bimartingale instance: dim {dim}, V1 axes {indices1}, V2 axes {indices2}, "
                 f"{coupling.size} coupling atoms")
    return ForwardInstance(mu=_normalized(coupling.first_marginal()), nu=_normalized(coupling.second_marginal()),
                           pair=pair, coupling=coupling, indices1=indices1, indices2=indices2)


def _normalized(m: DiscreteMeasure) -> DiscreteMeasure:
    return DiscreteMeasure.from_atoms(m.atoms(), m.mode, dim=m.dim)


def random_common_barycenter(rng: np.random.Generator, dim: int = 2, atoms_mu: int = 3, atoms_nu: int = 3,
                             mode: NumericMode = NumericMode.RATIONAL) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """Integer atoms with random weights; nu is translated onto the barycenter of mu"""
    def draw(count):
        return DiscreteMeasure.from_atoms(
            [([int(v) for v in rng.integers(-3, 4, size=dim)], int(rng.integers(1, 4))) for _ in range(count)],
            mode, dim=dim)

    mu, nu = draw(atoms_mu), draw(atoms_nu)
    shift = barycenter(mu) - barycenter(nu)
    nu = DiscreteMeasure.from_atoms(((p + shift, w) for p, w in nu.atoms()), mode, dim=dim)
    return mu, nu


def stacked_leaves(rng: Optional[np.random.Generator], mode: NumericMode = NumericMode.RATIONAL
                   ) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """
    Two horizontal leaves in R^3 with a degenerate covariance difference.
    On the upper leaf x3 = h1 the mass p at (u1, v1, h1) spreads along e1
    by +-a; on the lower leaf x3 = h2 the mass q at (u2, v2, h2) spreads
    along e2 by +-b. C = diag(p a^2, q b^2, 0), and each leaf splits once
    more inside its plane, so the tree has depth 2.

    With rng=None the unit instance mu = 1/2 (d(0,0,1) + d(0,0,-1)) is returned.
    """
    if rng is None:
        h1, h2, a, b, (u1, v1), (u2, v2) = 1, -1, 1, 1, (0, 0), (0, 0)
    else:
        h1, h2 = int(rng.integers(1, 4)), -int(rng.integers(1, 4))
        a, b = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        u1, v1, u2, v2 = (int(v) for v in rng.integers(-2, 3, size=4))
    # p h1 + q h2 = 0 keeps the barycenter on the plane x3 = 0
    p = to_scalar(-h2, mode) / (h1 - h2)
    q = to_scalar(h1, mode) / (h1 - h2)
    mu = DiscreteMeasure.from_atoms([((u1, v1, h1), p), ((u2, v2, h2), q)], mode, dim=3)
    nu = DiscreteMeasure.from_atoms([((u1 + a, v1, h1), p / 2), ((u1 - a, v1, h1), p / 2),
                                     ((u2, v2 + b, h2), q / 2), ((u2, v2 - b, h2), q / 2)], mode, dim=3)
    logger.debug(f"Stacked leaves: heights ({h1}, {h2}), spreads ({a}, {b})")
    return mu, nu

"""
Tests for the leaf partition tree and the decomposed solve.
"""

import logging
from fractions import Fraction

import numpy as np
import pytest

from beckmann_solver import build_z_grid, quadratic_dual_bound, solve_primal
from core_measures import DiscreteMeasure, NumericMode
from errors import BalanceError
from leaf_decomposition import (_cluster_float_keys, decompose, partition_by_leaf, reconstruct, solve_decomposed,
                                to_dot)
from linalg_spectral import SubspacePair
from reference_instances import degenerate_covariance, forward_bimartingale, spread_on_line, stacked_leaves


class TestPartition:
    def test_degenerate_covariance_tree(self, rational):
        root = decompose(*degenerate_covariance(rational))
        assert [c.id for c in root.children] == ["0", "1"]
        lower, upper = root.children
        assert lower.trivial and len(lower.children) == 2
        assert all(c.theta == Fraction(1, 4) for c in lower.children)
        assert upper.terminal and not upper.trivial
        assert upper.theta == Fraction(1, 2)
        assert upper.leaf_cost() == Fraction(1, 2)

    def test_children_tangent_and_support(self, rational):
        root = decompose(*degenerate_covariance(rational))
        upper = root.children[1]
        assert upper.tangent_rank == 1
        assert all(node.support_gap() == 0 for node in root.walk())

    def test_reconstruction(self, rational):
        mu, nu = degenerate_covariance(rational)
        mu_rec, nu_rec = reconstruct(decompose(mu, nu))
        assert mu_rec.same_as(mu) and nu_rec.same_as(nu)

    def test_mass_balance_failure(self, rational):
        mu = DiscreteMeasure.from_atoms([((0, 1), 1), ((0, -1), 1)], rational)
        nu = DiscreteMeasure.from_atoms([((0, 0), 2), ((0, 2), 1), ((0, -2), 1)], rational)
        with pytest.raises(BalanceError) as info:
            partition_by_leaf(mu, nu, SubspacePair.coordinate(2, [0], [], rational))
        assert info.value.path

    def test_moment_balance_failure(self, rational):
        mu = DiscreteMeasure.from_atoms([((1, 1), 1), ((-1, -1), 1)], rational)
        nu = DiscreteMeasure.from_atoms([((-1, 1), 1), ((1, -1), 1)], rational)
        with pytest.raises(BalanceError, match="Moment balance"):
            partition_by_leaf(mu, nu, SubspacePair.coordinate(2, [0], [], rational))

    def test_non_degenerate_root_is_terminal(self, rational):
        root = decompose(*spread_on_line(rational))
        assert root.terminal
        assert root.id == "root"

    def test_identical_measures(self, rational):
        mu, _ = degenerate_covariance(rational)
        root = decompose(mu, mu)
        assert root.trivial
        assert len(list(root.leaves())) == mu.size

    def test_float_key_clusters(self, caplog):
        with caplog.at_level(logging.WARNING, logger="leaf_decomposition"):
            rep = _cluster_float_keys([(0.0,), (1e-12,), (1.0,)], 1e-9)
        assert rep[(1e-12,)] == (0.0,)
        assert rep[(1.0,)] == (1.0,)
        assert "merged" in caplog.text

    def test_float_key_chains_join_across_coordinates(self):
        a, far, b, c = (0.0, 0.0), (1e-10, 1.0), (2e-10, 8e-10), (3e-10, 1.6e-9)
        rep = _cluster_float_keys([c, far, b, a], 1e-9)
        assert rep[b] == a
        assert rep[c] == a
        assert rep[far] == far

    def test_exports(self, rational):
        root = decompose(*degenerate_covariance(rational))
        dot = to_dot(root)
        assert dot.startswith("digraph leaves {")
        assert '"root" -> "1";' in dot
        tree = root.to_dict()
        assert len(tree["children"]) == 2
        assert tree["children"][1]["cost"] == "1/2"
        assert len(tree["kernel"]) == 1


class TestDecomposedSolve:
    def test_degenerate_covariance(self, rational):
        mu, nu = degenerate_covariance(rational)
        plan, report = solve_decomposed(mu, nu)
        assert report.total_cost == Fraction(1, 4)
        assert plan.total_cost() == Fraction(1, 4)
        assert plan.is_admissible(mu, nu)
        assert all(s.residual == 0 for s in report.solutions)

    def test_ledger(self, rational):
        _, report = solve_decomposed(*degenerate_covariance(rational))
        ledger = report.ledger()
        assert len(ledger) == 3
        assert set(ledger["leaf"]) == {"0.0", "0.1", "1"}
        assert ledger.loc[ledger["leaf"] == "1", "weighted_cost"].item() == "1/4"

    def test_float_mode(self):
        mu, nu = degenerate_covariance(NumericMode.FLOAT)
        plan, report = solve_decomposed(mu, nu)
        assert report.total_cost == pytest.approx(0.25, abs=1e-9)
        assert plan.is_admissible(mu, nu)

    @pytest.mark.parametrize("seed", range(4))
    def test_forward_instances_match_dual_bound(self, seed, rational):
        inst = forward_bimartingale(np.random.default_rng(seed), dim=2, groups=3, mode=rational)
        plan, report = solve_decomposed(inst.mu, inst.nu)
        value, _, _ = quadratic_dual_bound(inst.mu, inst.nu)
        assert report.root.terminal
        assert report.total_cost == value
        assert plan.total_cost() == value


class TestStackedLeaves:
    @pytest.mark.parametrize("mode", [NumericMode.RATIONAL, NumericMode.FLOAT])
    def test_unit_instance_has_depth_two(self, mode):
        root = decompose(*stacked_leaves(None, mode))
        assert len(root.children) == 2
        leaves = list(root.leaves())
        assert [n.depth for n in leaves] == [2, 2]
        assert all(n.tangent_rank == 1 for n in leaves)

    @pytest.mark.parametrize("seed", range(6))
    def test_round_trip(self, seed, rational):
        mu, nu = stacked_leaves(np.random.default_rng(seed), rational)
        plan, report = solve_decomposed(mu, nu)
        assert max(n.depth for n in report.root.leaves()) == 2
        mu_rec, nu_rec = reconstruct(report.root)
        assert mu_rec.same_as(mu) and nu_rec.same_as(nu)
        assert plan.is_admissible(mu, nu)
        value, _, pair = quadratic_dual_bound(mu, nu)
        assert report.total_cost == value
        primal = solve_primal(mu, nu, build_z_grid(mu, nu, pair, product_points=True))
        assert primal.primal_cost == report.total_cost

    def test_float_round_trip(self):
        mu, nu = stacked_leaves(np.random.default_rng(7), NumericMode.FLOAT)
        plan, report = solve_decomposed(mu, nu)
        rational_mu, rational_nu = stacked_leaves(np.random.default_rng(7), NumericMode.RATIONAL)
        _, exact = solve_decomposed(rational_mu, rational_nu)
        assert report.total_cost == pytest.approx(float(exact.total_cost), abs=1e-9)
        assert plan.is_admissible(mu, nu)

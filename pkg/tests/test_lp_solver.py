"""
Tests for the two-phase simplex: exact verdicts, duals, guards and a
brute-force vertex enumeration oracle.
"""

from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from core_measures import NumericMode
from errors import MalformedProgramError, ProblemTooLargeError
from lp_solver import Constraint, LinearProgram, LPBuilder, Relation, dump_program, solve_lp


def two_row_program(mode):
    """min x + y  s.t.  x + 2y >= 4,  3x + y >= 6"""
    lp = LPBuilder(mode, name="two_rows")
    x = lp.add_variable(cost=1, name="x")
    y = lp.add_variable(cost=1, name="y")
    lp.add_constraint({x: 1, y: 2}, Relation.GE, 4)
    lp.add_constraint({x: 3, y: 1}, Relation.GE, 6)
    return lp.build()


def vertex_oracle(A, b, c):
    """min c x over {A x = b, x >= 0} by enumerating bases"""
    m, n = A.shape
    best = None
    for cols in combinations(range(n), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if np.any(xb < -1e-9):
            continue
        value = float(c[list(cols)] @ xb)
        best = value if best is None else min(best, value)
    return best


def equality_program(A, b, c, mode):
    lp = LPBuilder(mode, name="oracle")
    cols = [lp.add_variable(cost=int(v)) for v in c]
    for row, rhs in zip(A, b):
        lp.add_constraint({cols[j]: int(v) for j, v in enumerate(row)}, Relation.EQ, int(rhs))
    return lp.build()


class TestExactSolutions:
    def test_two_row_optimum(self, rational):
        outcome = solve_lp(two_row_program(rational))
        assert outcome.optimal
        assert outcome.objective == Fraction(14, 5)
        assert outcome.solution.tolist() == [Fraction(8, 5), Fraction(6, 5)]

    def test_duals_match_objective(self, rational):
        outcome = solve_lp(two_row_program(rational))
        assert outcome.duals.tolist() == [Fraction(2, 5), Fraction(1, 5)]

    def test_negative_rhs_rows_are_flipped(self, rational):
        lp = LPBuilder(rational)
        x = lp.add_variable(cost=1)
        lp.add_constraint({x: -1}, Relation.LE, -2)
        outcome = solve_lp(lp.build())
        assert outcome.objective == 2
        assert outcome.duals.tolist() == [-1]

    def test_upper_bounds(self, rational):
        lp = LPBuilder(rational)
        x = lp.add_variable(cost=-1, upper=3)
        outcome = solve_lp(lp.build())
        assert outcome.solution[x] == 3

    def test_infeasible(self, rational):
        lp = LPBuilder(rational)
        x = lp.add_variable(cost=1)
        lp.add_constraint({x: 1}, Relation.LE, 1)
        lp.add_constraint({x: 1}, Relation.GE, 2)
        assert solve_lp(lp.build()).status == "infeasible"

    def test_unbounded(self, rational):
        lp = LPBuilder(rational)
        x = lp.add_variable(cost=-1)
        lp.add_constraint({x: 1}, Relation.GE, 1)
        assert solve_lp(lp.build()).status == "unbounded"

    def test_float_mode_agrees(self):
        outcome = solve_lp(two_row_program(NumericMode.FLOAT))
        assert outcome.objective == pytest.approx(2.8)


class TestVertexOracle:
    @pytest.mark.parametrize("seed", range(8))
    def test_random_equality_programs(self, seed, rational):
        rng = np.random.default_rng(seed)
        A = np.hstack([rng.integers(-3, 4, size=(2, 3)), np.eye(2, dtype=int)])
        x0 = rng.integers(0, 3, size=5)
        b = A @ x0
        c = rng.integers(1, 6, size=5)
        expected = vertex_oracle(A.astype(float), b.astype(float), c.astype(float))

        exact = solve_lp(equality_program(A, b, c, rational))
        assert exact.optimal
        assert float(exact.objective) == pytest.approx(expected, abs=1e-9)
        assert sum(Fraction(int(v)) * d for v, d in zip(b, exact.duals)) == exact.objective

        approx = solve_lp(equality_program(A, b, c, NumericMode.FLOAT))
        assert approx.objective == pytest.approx(expected, abs=1e-7)

    @pytest.mark.parametrize("seed", range(4))
    def test_degenerate_guard_keeps_the_optimum(self, seed):
        rng = np.random.default_rng(100 + seed)
        A = np.hstack([rng.integers(-3, 4, size=(3, 3)), np.eye(3, dtype=int)])
        x0 = np.array([1, 0, 0, 0, 0, 0])
        b = A @ x0
        c = rng.integers(1, 6, size=6)
        expected = vertex_oracle(A.astype(float), b.astype(float), c.astype(float))
        outcome = solve_lp(equality_program(A, b, c, NumericMode.FLOAT), degenerate_pivot_limit=0)
        assert outcome.optimal
        assert outcome.objective == pytest.approx(expected, abs=1e-5)


class TestGuards:
    def test_rational_nonzero_limit(self, rational):
        with pytest.raises(ProblemTooLargeError) as info:
            solve_lp(two_row_program(rational), max_rational_nonzeros=3)
        assert "--mode float" in str(info.value)

    def test_float_mode_ignores_nonzero_limit(self):
        assert solve_lp(two_row_program(NumericMode.FLOAT), max_rational_nonzeros=3).optimal

    def test_iteration_limit(self, rational):
        with pytest.raises(RuntimeError):
            solve_lp(two_row_program(rational), max_iterations=0)

    def test_dense_row_of_wrong_length(self, rational):
        lp = LinearProgram(objective=(1, 1), constraints=(Constraint([1, 1, 1], Relation.EQ, 1),), mode=rational)
        with pytest.raises(MalformedProgramError):
            solve_lp(lp)

    def test_unknown_column(self, rational):
        lp = LinearProgram(objective=(1,), constraints=(Constraint({4: 1}, Relation.EQ, 1),), mode=rational)
        with pytest.raises(MalformedProgramError):
            solve_lp(lp)

    def test_unknown_relation(self, rational):
        lp = LinearProgram(objective=(1,), constraints=(Constraint({0: 1}, "==", 1),), mode=rational)
        with pytest.raises(MalformedProgramError):
            solve_lp(lp)


class TestDump:
    def test_lp_text_sections(self, rational):
        lp = LPBuilder(rational, name="bounded")
        x = lp.add_variable(cost="1/2", name="x", upper=4)
        lp.add_constraint({x: 1}, Relation.GE, 1, name="floor")
        text = lp.build().to_lp_text()
        assert "Minimize" in text and "Subject To" in text and "Bounds" in text
        assert " floor: 1 x >= 1" in text
        assert text.rstrip().endswith("End")

    def test_dump_directory(self, rational, tmp_path):
        path = dump_program(two_row_program(rational), str(tmp_path / "lps"))
        assert path.name.endswith("_two_rows.lp")
        assert path.read_text(encoding="utf-8").startswith("\\ two_rows")

    def test_solve_with_dump(self, rational, tmp_path):
        solve_lp(two_row_program(rational), dump_dir=str(tmp_path))
        assert len(list(tmp_path.glob("*.lp"))) == 1


def random_equality_instance(seed, rows=2, structural=3):
    """Integer A = [R | I] with b = A x0 for an integer x0 >= 0, so the program is feasible"""
    rng = np.random.default_rng(seed)
    A = np.hstack([rng.integers(-3, 4, size=(rows, structural)), np.eye(rows, dtype=int)])
    x0 = rng.integers(0, 3, size=structural + rows)
    return A, A @ x0, rng.integers(1, 6, size=structural + rows), x0


class TestExactRevised:
    @pytest.mark.parametrize("seed", range(200))
    def test_vertex_oracle(self, seed, rational):
        A, b, c, _ = random_equality_instance(1000 + seed)
        expected = vertex_oracle(A.astype(float), b.astype(float), c.astype(float))
        outcome = solve_lp(equality_program(A, b, c, rational))
        assert outcome.optimal
        assert float(outcome.objective) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_cold_start_agrees(self, seed, rational):
        A, b, c, _ = random_equality_instance(2000 + seed, rows=3, structural=4)
        warm = solve_lp(equality_program(A, b, c, rational))
        cold = solve_lp(equality_program(A, b, c, rational), warm_start=False)
        assert warm.objective == cold.objective
        assert not cold.warm_start

    def test_warm_start_is_used(self, rational):
        assert solve_lp(two_row_program(rational)).warm_start

    @pytest.mark.parametrize("seed", range(20))
    def test_weak_and_strong_duality(self, seed, rational):
        A, b, c, x0 = random_equality_instance(3000 + seed, rows=3, structural=4)
        outcome = solve_lp(equality_program(A, b, c, rational))
        y = outcome.duals
        assert outcome.objective <= sum(Fraction(int(v)) * int(w) for v, w in zip(c, x0))
        for j in range(A.shape[1]):
            assert int(c[j]) - sum(int(A[i, j]) * y[i] for i in range(A.shape[0])) >= 0
        assert sum(int(v) * d for v, d in zip(b, y)) == outcome.objective

    @pytest.mark.parametrize("seed", range(20))
    def test_row_order_does_not_matter(self, seed, rational):
        A, b, c, _ = random_equality_instance(4000 + seed, rows=3, structural=4)
        perm = np.random.default_rng(seed).permutation(3)
        original = solve_lp(equality_program(A, b, c, rational))
        permuted = solve_lp(equality_program(A[perm], b[perm], c, rational))
        assert original.objective == permuted.objective

    def test_redundant_row_keeps_exact_duals(self, rational):
        lp = LPBuilder(rational)
        x = lp.add_variable(cost=1)
        y = lp.add_variable(cost=2)
        lp.add_constraint({x: 1, y: 1}, Relation.EQ, 2)
        lp.add_constraint({x: 2, y: 2}, Relation.EQ, 4)
        lp.add_constraint({x: 1}, Relation.LE, "3/2")
        outcome = solve_lp(lp.build())
        assert outcome.objective == Fraction(5, 2)
        assert sum(d * r for d, r in zip(outcome.duals, [2, 4, Fraction(3, 2)])) == outcome.objective

    def test_degenerate_switch_to_bland(self, rational):
        A, b, c, _ = random_equality_instance(5, rows=3, structural=4)
        expected = vertex_oracle(A.astype(float), b.astype(float), c.astype(float))
        outcome = solve_lp(equality_program(A, b, c, rational), degenerate_pivot_limit=0, warm_start=False)
        assert float(outcome.objective) == pytest.approx(expected, abs=1e-9)

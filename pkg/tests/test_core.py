import itertools

import numpy as np
import pytest

from srot import (
    Atom,
    ConfigurationError,
    ConstraintError,
    NumericError,
    SemiRelaxedProblem,
    TransportPlan,
    column_gap,
    curvature_bounds,
    duality_gap,
    gradient_column,
    lagrangian_dual_value,
    lmo_column,
    objective,
    random_problem,
    reference_optimum,
    update_column,
    vertex_plan,
)
from srot.core import ROWSUM_REFRESH_PERIOD

from conftest import dense_objective, feasible_plan


def swap_problem(lam=1.0):
    return SemiRelaxedProblem([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.5, 0.5], lam)


class TestProblemValidation:
    def test_negative_cost(self):
        with pytest.raises(ConfigurationError):
            SemiRelaxedProblem([[-1.0]], [1.0], [1.0], 1.0)

    def test_non_finite_cost(self):
        with pytest.raises(NumericError):
            SemiRelaxedProblem([[np.inf, 0.0]], [1.0], [0.5, 0.5], 1.0)

    def test_histogram_sum(self):
        with pytest.raises(ConfigurationError):
            SemiRelaxedProblem(np.ones((2, 2)), [0.5, 0.6], [0.5, 0.5], 1.0)

    def test_histogram_tolerance_and_renormalization(self):
        a = np.array([0.5, 0.5 + 5e-13])
        p = SemiRelaxedProblem(np.ones((2, 2)), a, [0.5, 0.5], 1.0)
        assert abs(p.a.sum() - 1.0) <= 1e-15

    @pytest.mark.parametrize("lam", [0.0, -1.0, np.nan])
    def test_lambda_positive(self, lam):
        with pytest.raises(ConfigurationError):
            SemiRelaxedProblem(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5], lam)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            SemiRelaxedProblem(np.ones((3, 2)), [0.5, 0.5], [0.5, 0.5], 1.0)

    def test_read_only(self):
        p = random_problem(3, 3, 1.0, seed=0)
        with pytest.raises(ValueError):
            p.C[0, 0] = 5.0

    def test_digest_depends_on_lambda(self):
        p = random_problem(3, 3, 1.0, seed=0)
        q = random_problem(3, 3, 2.0, seed=0)
        assert p.digest() != q.digest()
        assert p.digest() == random_problem(3, 3, 1.0, seed=0).digest()


class TestObjective:
    def test_zero_on_matching_diagonal(self):
        p = swap_problem()
        assert objective(p, TransportPlan(np.diag([0.5, 0.5]))) == 0.0

    def test_single_row_plan(self):
        p = swap_problem()
        T = TransportPlan([[0.5, 0.5], [0.0, 0.0]])
        assert objective(p, T) == pytest.approx(0.75, abs=1e-15)

    def test_seed7_matches_loop_oracle(self):
        # loop-based recomputation, frozen
        p = random_problem(4, 4, 0.5, seed=7)
        T = feasible_plan(p.b, 4, 107)
        assert objective(p, T) == pytest.approx(0.492050902993887, abs=1e-14)
        assert objective(p, T) == pytest.approx(dense_objective(p, T.T), abs=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            objective(swap_problem(), TransportPlan(np.zeros((3, 2))))


class TestGradient:
    def test_feasible_rows_give_cost_column(self):
        p = swap_problem()
        T = TransportPlan(np.diag([0.5, 0.5]))
        np.testing.assert_array_equal(gradient_column(p, T, 1), p.C[:, 1])

    def test_large_lambda_limit(self):
        p = random_problem(3, 3, 1e9, seed=1)
        T = vertex_plan(p)
        np.testing.assert_allclose(gradient_column(p, T, 2), p.C[:, 2], atol=1e-8)

    def test_finite_differences_seed11(self):
        p = random_problem(3, 3, 0.2, seed=11)
        T = feasible_plan(p.b, 3, 111)
        h = 1e-6
        for i in range(3):
            g = gradient_column(p, T, i)
            fd = np.empty(3)
            for j in range(3):
                up, dn = T.T.copy(), T.T.copy()
                up[j, i] += h
                dn[j, i] -= h
                fd[j] = (dense_objective(p, up) - dense_objective(p, dn)) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)

    def test_index_out_of_range(self):
        p = swap_problem()
        with pytest.raises(IndexError):
            gradient_column(p, vertex_plan(p), 2)


class TestLMO:
    def test_argmin(self):
        assert lmo_column([3.0, 1.0, 2.0], 0.4) == Atom(0, 1, 0.4)

    def test_tie_goes_to_lowest_row(self):
        assert lmo_column([2.0, 2.0, 2.0], 0.1).row == 0

    def test_vertex_enumeration_seed3(self):
        rng = np.random.default_rng(3)
        c = rng.random(9)
        grad = -c
        values = [np.eye(9)[k] @ grad for k in range(9)]
        assert lmo_column(grad, 0.3).row == int(np.argmin(values))

    @pytest.mark.parametrize("grad", [[], [1.0, np.nan], [np.inf]])
    def test_bad_gradient(self, grad):
        with pytest.raises(NumericError):
            lmo_column(grad, 0.5)

    def test_atom_vector(self):
        np.testing.assert_array_equal(Atom(2, 1, 0.25).vector(3), [0.0, 0.25, 0.0])


def enumerate_gap(p, T):
    """max over all m**n vertex plans S of <T - S, grad f(T)>."""
    G = p.C + ((T.sum(axis=1) - p.a) / p.lam)[:, None]
    best = -np.inf
    for rows in itertools.product(range(p.m), repeat=p.n):
        S = np.zeros(p.shape)
        S[list(rows), range(p.n)] = p.b
        best = max(best, float(np.vdot(T - S, G)))
    return best


class TestDualityGap:
    def test_vanishes_at_certified_optimum(self):
        p = random_problem(3, 3, 0.5, seed=2)
        ref = reference_optimum(p, tol=1e-10)
        assert ref.certified
        assert duality_gap(p, ref.plan).total <= 1e-8

    def test_seed5_vertex_enumeration(self):
        p = random_problem(2, 2, 0.3, seed=5)
        T = feasible_plan(p.b, 2, 105)
        # frozen from the loop oracle
        assert duality_gap(p, T).total == pytest.approx(4.341984784834822, abs=1e-12)
        assert duality_gap(p, T).total == pytest.approx(enumerate_gap(p, T.T), abs=1e-12)

    def test_seed9_lagrangian_oracle(self):
        p = random_problem(4, 4, 0.05, seed=9)
        T = feasible_plan(p.b, 4, 109)
        total = duality_gap(p, T).total
        assert total == pytest.approx(4.4996379816505385, abs=1e-9)
        assert abs(total - (objective(p, T) - lagrangian_dual_value(p, T))) <= 1e-9

    def test_report_consistency(self, small_problem):
        T = feasible_plan(small_problem.b, small_problem.m, 0)
        rep = duality_gap(small_problem, T)
        assert abs(rep.total - rep.per_column.sum()) <= 1e-10 * (1 + abs(rep.total))
        G = small_problem.C + ((T.row_sums - small_problem.a) / small_problem.lam)[:, None]
        np.testing.assert_array_equal(rep.argmin_rows, np.argmin(G, axis=0))


class TestColumnGap:
    def test_zero_at_lmo_vertex(self):
        p = swap_problem()
        T = TransportPlan(np.diag([0.5, 0.5]))
        assert column_gap(p, T, 0) == 0.0
        assert column_gap(p, T, 1) == 0.0

    def test_sum_equals_total(self):
        for seed in range(20):
            p = random_problem(6, 5, 0.05, seed=seed)
            T = feasible_plan(p.b, 6, seed)
            total = duality_gap(p, T).total
            s = sum(column_gap(p, T, i) for i in range(p.n))
            assert abs(s - total) <= 1e-10 * (1 + abs(total))

    def test_nonnegative_seed2(self):
        p = random_problem(4, 3, 0.1, seed=2)
        T = feasible_plan(p.b, 4, 2)
        assert all(column_gap(p, T, i) >= -1e-12 for i in range(3))


class TestLagrangianDual:
    def test_strong_duality_at_optimum(self):
        p = random_problem(4, 3, 0.2, seed=4)
        ref = reference_optimum(p, tol=1e-10)
        assert lagrangian_dual_value(p, ref.plan) == pytest.approx(ref.f_star, abs=1e-8)

    def test_weak_duality(self):
        for seed in range(30):
            p = random_problem(5, 5, 0.01, seed=seed)
            T = feasible_plan(p.b, 5, seed + 1)
            assert lagrangian_dual_value(p, T) <= objective(p, T)

    def test_seed13_cross_check(self):
        p = random_problem(5, 3, 0.02, seed=13)
        T = feasible_plan(p.b, 5, 113)
        diff = objective(p, T) - lagrangian_dual_value(p, T)
        assert diff == pytest.approx(6.857878768734734, abs=1e-9)
        assert abs(diff - duality_gap(p, T).total) <= 1e-9


class TestCurvatureBounds:
    def test_uniform(self):
        p = SemiRelaxedProblem(np.ones((2, 4)), [0.5, 0.5], np.full(4, 0.25), 1.0)
        block, total = curvature_bounds(p)
        np.testing.assert_allclose(block, 0.25)
        assert total == pytest.approx(1.0)

    def test_degenerate_b(self):
        p = SemiRelaxedProblem(np.ones((2, 3)), [0.5, 0.5], [1.0, 0.0, 0.0], 0.5)
        assert curvature_bounds(p)[1] == pytest.approx(8.0)

    def test_sampled_quotients(self):
        p = random_problem(4, 3, 0.05, seed=0)
        block, _ = curvature_bounds(p)
        rng = np.random.default_rng(0)
        worst = -np.inf
        for _ in range(10000):
            i = int(rng.integers(3))
            T = rng.random((4, 3))
            T *= p.b / T.sum(axis=0)
            s = rng.random(4)
            s *= p.b[i] / s.sum()
            gamma = rng.uniform(1e-3, 1.0)
            Y = T.copy()
            Y[:, i] += gamma * (s - T[:, i])
            g = p.C[:, i] + (T.sum(axis=1) - p.a) / p.lam
            q = 2 / gamma ** 2 * (dense_objective(p, Y) - dense_objective(p, T)
                                  - (Y[:, i] - T[:, i]) @ g)
            worst = max(worst, q - block[i])
        assert worst <= 1e-9


class TestUpdateColumn:
    def test_identity_update(self, small_problem):
        T = feasible_plan(small_problem.b, small_problem.m, 1)
        before, rs = T.T.copy(), T.row_sums.copy()
        update_column(T, 2, T.T[:, 2].copy(), mass=small_problem.b[2])
        np.testing.assert_array_equal(T.T, before)
        np.testing.assert_array_equal(T.row_sums, rs)

    def test_vertex_replacement(self, small_problem):
        T = feasible_plan(small_problem.b, small_problem.m, 1)
        i, bi = 1, small_problem.b[1]
        r0, t0 = T.row_sums[0], T.T[0, 1]
        update_column(T, i, Atom(i, 0, bi).vector(small_problem.m), mass=bi)
        assert T.row_sums[0] == pytest.approx(r0 + bi - t0, abs=1e-15)

    def test_mass_violation(self, small_problem):
        T = vertex_plan(small_problem)
        with pytest.raises(ConstraintError):
            update_column(T, 0, np.ones(small_problem.m), mass=small_problem.b[0])
        with pytest.raises(ConstraintError):
            bad = np.zeros(small_problem.m)
            bad[0], bad[1] = 2 * small_problem.b[0], -small_problem.b[0]
            update_column(T, 0, bad, mass=small_problem.b[0])

    def test_drift_after_many_updates(self):
        p = random_problem(8, 6, 1.0, seed=0)
        T = vertex_plan(p)
        rng = np.random.default_rng(0)
        for _ in range(100000 // 8):
            cols = rng.integers(0, 6, size=8)
            new = rng.random((8, 8))
            for k, i in enumerate(cols):
                update_column(T, int(i), new[k] * (p.b[i] / new[k].sum()))
        assert np.max(np.abs(T.row_sums - T.T.sum(axis=1))) <= 1e-9
        T.check(p.b)

    def test_periodic_refresh(self):
        p = random_problem(3, 2, 1.0, seed=0)
        T = vertex_plan(p)
        for k in range(ROWSUM_REFRESH_PERIOD):
            update_column(T, k % 2, T.T[:, k % 2].copy())
        assert T._updates == 0

    def test_vertex_plan_sparsity(self):
        p = random_problem(6, 4, 1.0, seed=0)
        T = vertex_plan(p, row=2)
        np.testing.assert_array_equal(T.T[2], p.b)
        assert np.count_nonzero(T.T) == 4

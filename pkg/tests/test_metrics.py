import math

import numpy as np
import pytest

from srot import (
    MetricRecord,
    SolverTrace,
    TRACE_COLUMNS,
    TransportPlan,
    lp_transport_solve,
    marginal_error,
    matrix_error,
    random_problem,
    sparsity,
    value_error,
    vertex_plan,
)
from srot.metrics import as_matrix


class TestMarginalError:
    def test_doubly_feasible(self):
        lp = lp_transport_solve(np.ones((3, 3)), [0.2, 0.3, 0.5], [0.5, 0.3, 0.2])
        assert marginal_error(lp.T, [0.2, 0.3, 0.5], [0.5, 0.3, 0.2]) <= 1e-15

    def test_single_row_offset(self):
        a = np.array([0.4, 0.6])
        T = np.array([[0.3, 0.2], [0.3, 0.2]])  # column sums b = (0.6, 0.4), rows (0.5, 0.5)
        b = np.array([0.6, 0.4])
        delta = 0.1
        T2 = T.copy()
        T2[0, 0] -= delta / 2
        T2[1, 0] += delta / 2
        assert marginal_error(T2, np.array([0.45, 0.55]), b) == pytest.approx(
            abs(-0.05 + 0.05), abs=1e-15)
        assert marginal_error(T, a + np.array([0.1, -0.1]), b) == pytest.approx(0.0, abs=1e-15)

    def test_offset_on_first_row(self):
        b = np.array([0.5, 0.5])
        T = np.array([[0.3, 0.3], [0.2, 0.2]])
        a = T.sum(axis=1) - np.array([0.07, 0.0])
        assert marginal_error(T, a, b) == pytest.approx(0.07, abs=1e-15)

    def test_seed12_loop_oracle(self):
        rng = np.random.default_rng(12)
        T, L, C = rng.random((3, 4)), rng.random((3, 4)), rng.random((3, 4))
        a = rng.random(3)
        a /= a.sum()
        b = rng.random(4)
        b /= b.sum()
        # frozen from plain-loop evaluations
        assert marginal_error(T, a, b) == pytest.approx(5.008765618194463, abs=1e-12)
        assert matrix_error(T, L) == pytest.approx(0.7087986207731455, abs=1e-12)
        assert value_error(T, L, C) == pytest.approx(0.038271084939670005, abs=1e-12)


class TestSparsity:
    def test_vertex_plan(self):
        p = random_problem(8, 5, 1.0, seed=0)
        assert sparsity(vertex_plan(p)) == pytest.approx(7 / 8)

    def test_dense(self):
        assert sparsity(np.full((3, 3), 0.1)) == 0.0

    def test_threshold(self):
        T = np.array([[1e-13, 1e-11], [0.0, 1.0]])
        assert sparsity(T) == 0.5
        assert sparsity(T, threshold=1e-10) == 0.75
        with pytest.raises(ValueError):
            sparsity(T, threshold=-1.0)


class TestLPErrors:
    def test_identical(self):
        p = random_problem(4, 4, 1.0, seed=3)
        lp = lp_transport_solve(p.C, p.a, p.b)
        assert matrix_error(lp.T, lp) == 0.0
        assert value_error(lp, lp.T, p.C) == 0.0

    def test_double(self):
        p = random_problem(4, 4, 1.0, seed=3)
        lp = lp_transport_solve(p.C, p.a, p.b)
        assert matrix_error(2 * lp.T, lp.T) == pytest.approx(1.0)

    def test_zero_lp_cost_uses_absolute(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        L = np.diag([0.5, 0.5])
        T = np.full((2, 2), 0.25)
        val, absolute = value_error(T, L, C, return_flag=True)
        assert absolute and val == pytest.approx(0.5)

    def test_pure(self):
        rng = np.random.default_rng(1)
        T, L, C = rng.random((3, 3)), rng.random((3, 3)), rng.random((3, 3))
        first = (matrix_error(T, L), value_error(T, L, C), sparsity(T))
        assert first == (matrix_error(T, L), value_error(T, L, C), sparsity(T))

    def test_arrays_are_not_transposed(self):
        T = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(as_matrix(T), T)
        np.testing.assert_array_equal(as_matrix(TransportPlan(T)), T)


class TestTrace:
    def _rec(self, epoch):
        return MetricRecord(epoch, 0.0, 1.0, 0.5, 0.0, 0.5)

    def test_strictly_increasing(self):
        tr = SolverTrace()
        tr.append(self._rec(0))
        tr.append(self._rec(3))
        with pytest.raises(ValueError):
            tr.append(self._rec(3))

    def test_columns(self):
        tr = SolverTrace(meta={"seed": 1})
        for e in range(3):
            tr.append(self._rec(e))
        np.testing.assert_array_equal(tr.column("epoch"), [0, 1, 2])
        assert math.isnan(tr.column("matrix_error")[0])
        assert list(tr.to_dicts()[0]) == list(TRACE_COLUMNS)
        with pytest.raises(KeyError):
            tr.column("nope")

"""Problem data, objective, gradients, linear minimization oracle and duality gaps.

The semi-relaxed problem keeps the column marginals ``T.T @ 1 = b`` as hard
constraints and replaces the row marginals by a quadratic penalty::

    f(T) = <T, C> + 1/(2 lam) * ||T @ 1 - a||^2

so the feasible set is a product of scaled simplices, one per column.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SrotError",
    "ConfigurationError",
    "ConstraintError",
    "NumericError",
    "SemiRelaxedProblem",
    "TransportPlan",
    "Atom",
    "GapReport",
    "ROWSUM_REFRESH_PERIOD",
    "random_problem",
    "vertex_plan",
    "objective",
    "gradient_column",
    "gradient_matrix",
    "lmo_column",
    "lmo_plan",
    "linearization_gap",
    "duality_gap",
    "column_gap",
    "lagrangian_dual_value",
    "curvature_bounds",
    "update_column",
]

HISTOGRAM_TOL = 1e-12
MASS_TOL = 1e-10
# cached row sums are rebuilt from scratch after this many column updates
ROWSUM_REFRESH_PERIOD = 1024


class SrotError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(SrotError, ValueError):
    """Inputs or options are malformed (shapes, signs, unknown choices)."""


class ConstraintError(SrotError, ValueError):
    """A feasibility constraint of the transport polytope would be violated."""


class NumericError(SrotError, ArithmeticError):
    """Non-finite values were produced or supplied."""


def _histogram(x, name):
    x = np.array(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ConfigurationError(f"{name} must be non-empty")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite entries")
    if np.any(x < 0):
        raise ConfigurationError(f"{name} has negative entries")
    total = x.sum()
    if abs(total - 1.0) > HISTOGRAM_TOL:
        raise ConfigurationError(f"{name} sums to {total!r}, expected 1")
    # single renormalization on ingest
    return x / total


@dataclass(frozen=True, eq=False)
class SemiRelaxedProblem:
    """Cost matrix ``C`` (m x n), source histogram ``a``, target histogram ``b``
    and relaxation parameter ``lam``.

    Histograms are checked to sum to one within 1e-12 and renormalized once.
    Arrays are made read-only.
    """

    C: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lam: float

    def __post_init__(self):
        C = np.array(self.C, dtype=np.float64)
        if C.ndim != 2 or C.size == 0:
            raise ConfigurationError("C must be a non-empty 2-d array")
        if not np.all(np.isfinite(C)):
            raise NumericError("C contains non-finite entries")
        if np.any(C < 0):
            raise ConfigurationError("C must be nonnegative")
        a = _histogram(self.a, "a")
        b = _histogram(self.b, "b")
        if C.shape != (a.size, b.size):
            raise ConfigurationError(
                f"C has shape {C.shape}, expected ({a.size}, {b.size})")
        lam = float(self.lam)
        if not np.isfinite(lam) or lam <= 0:
            raise ConfigurationError("lam must be a positive finite number")
        for arr in (C, a, b):
            arr.flags.writeable = False
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lam", lam)

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return self.C.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.C.shape

    def digest(self) -> str:
        """Short SHA-256 fingerprint of (C, a, b, lam)."""
        h = hashlib.sha256()
        for arr in (self.C, self.a, self.b):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(np.float64(self.lam).tobytes())
        return h.hexdigest()[:16]


def random_problem(m, n, lam, seed=0, rng=None):
    """Uniform ``[0, 1)`` costs and histograms drawn uniformly then normalized."""
    if rng is None:
        rng = np.random.default_rng(seed)
    C = rng.random((m, n))
    a = rng.random(m) + 1e-3
    b = rng.random(n) + 1e-3
    return SemiRelaxedProblem(C, a / a.sum(), b / b.sum(), lam)


@dataclass(eq=False)
class TransportPlan:
    """Column-feasible plan with an incrementally maintained row-sum cache.

    ``row_sums`` always approximates ``T.sum(axis=1)``; it is rebuilt from
    scratch every ``ROWSUM_REFRESH_PERIOD`` column updates.
    """

    T: np.ndarray
    row_sums: np.ndarray = None
    _updates: int = field(default=0, repr=False)

    def __post_init__(self):
        self.T = np.array(self.T, dtype=np.float64)
        if self.T.ndim != 2:
            raise ConfigurationError("T must be 2-d")
        if self.row_sums is None:
            self.row_sums = self.T.sum(axis=1)
        else:
            self.row_sums = np.array(self.row_sums, dtype=np.float64)

    @property
    def shape(self):
        return self.T.shape

    def refresh(self):
        self.row_sums = self.T.sum(axis=1)
        self._updates = 0

    def copy(self) -> TransportPlan:
        return TransportPlan(self.T.copy(), self.row_sums.copy(), self._updates)

    def check(self, b, tol=MASS_TOL):
        """Raise ``ConstraintError`` unless the plan is column feasible."""
        if np.any(self.T < 0):
            raise ConstraintError("plan has negative entries")
        dev = np.max(np.abs(self.T.sum(axis=0) - b))
        if dev > tol:
            raise ConstraintError(f"column masses deviate from b by {dev:.3e}")
        drift = np.max(np.abs(self.T.sum(axis=1) - self.row_sums))
        if drift > tol:
            raise ConstraintError(f"cached row sums drifted by {drift:.3e}")


def vertex_plan(problem: SemiRelaxedProblem, row=0) -> TransportPlan:
    """All column mass on a single row, ``(b_1 e_row, ..., b_n e_row)``."""
    T = np.zeros(problem.shape)
    T[row] = problem.b
    return TransportPlan(T)


@dataclass(frozen=True)
class Atom:
    """Scaled simplex vertex ``value * e_row`` living in column ``column``."""

    column: int
    row: int
    value: float

    def vector(self, m):
        v = np.zeros(m)
        v[self.row] = self.value
        return v


@dataclass(frozen=True, eq=False)
class GapReport:
    total: float
    per_column: np.ndarray
    argmin_rows: np.ndarray


def _check_dims(problem, plan):
    if plan.T.shape != problem.shape:
        raise ConfigurationError(
            f"plan has shape {plan.T.shape}, problem is {problem.shape}")


def _check_column(problem, i):
    if not 0 <= i < problem.n:
        raise IndexError(f"column index {i} out of range for n={problem.n}")


def objective(problem: SemiRelaxedProblem, plan: TransportPlan) -> float:
    """``<T, C> + ||T 1 - a||^2 / (2 lam)`` using the cached row sums."""
    _check_dims(problem, plan)
    resid = plan.row_sums - problem.a
    return float(np.vdot(plan.T, problem.C) + resid @ resid / (2.0 * problem.lam))


def gradient_column(problem, plan, i) -> np.ndarray:
    """Partial gradient on column ``i``: ``c_i + (T 1 - a) / lam``."""
    _check_column(problem, i)
    return problem.C[:, i] + (plan.row_sums - problem.a) / problem.lam


def gradient_matrix(problem, plan) -> np.ndarray:
    _check_dims(problem, plan)
    return problem.C + ((plan.row_sums - problem.a) / problem.lam)[:, None]


def lmo_column(grad, bi, column=0) -> Atom:
    """Minimize ``<s, grad>`` over ``bi * simplex``; ties go to the lowest row."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.size == 0 or not np.all(np.isfinite(grad)):
        raise NumericError("gradient is empty or non-finite")
    if bi < 0:
        raise ConfigurationError("column mass must be nonnegative")
    # np.argmin returns the first occurrence, which is the tie rule
    return Atom(column, int(np.argmin(grad)), float(bi))


def lmo_plan(problem, plan, grad=None) -> np.ndarray:
    """Rows selected by the column-wise oracle, as an int array of length n."""
    if grad is None:
        grad = gradient_matrix(problem, plan)
    if not np.all(np.isfinite(grad)):
        raise NumericError("gradient is non-finite")
    return np.argmin(grad, axis=0)


def linearization_gap(T, grad, b):
    """Per-column gaps ``<t_i, g_i> - b_i min_j g_ji`` for a gradient matrix."""
    return np.einsum("ij,ij->j", T, grad) - b * grad.min(axis=0)


def duality_gap(problem: SemiRelaxedProblem, plan: TransportPlan) -> GapReport:
    """Linearization duality gap with its per-column split.

    The total is evaluated in the closed form
    ``<T - S, C> + <T 1 - S 1, T 1 - a> / lam``.
    """
    _check_dims(problem, plan)
    resid = plan.row_sums - problem.a
    grad = problem.C + (resid / problem.lam)[:, None]
    rows = lmo_plan(problem, plan, grad)
    cols = np.arange(problem.n)
    s_vals = problem.b
    s_rowsums = np.bincount(rows, weights=s_vals, minlength=problem.m)
    lin = np.vdot(plan.T, problem.C) - s_vals @ problem.C[rows, cols]
    total = lin + (plan.row_sums - s_rowsums) @ resid / problem.lam
    per_column = linearization_gap(plan.T, grad, problem.b)
    return GapReport(float(total), per_column, rows)


def column_gap(problem, plan, i) -> float:
    """Gap contribution ``<t_i - s_i, grad_i f(T)>`` of a single column."""
    grad = gradient_column(problem, plan, i)
    j = int(np.argmin(grad))
    return float(plan.T[:, i] @ grad - problem.b[i] * grad[j])


def lagrangian_dual_value(problem, plan) -> float:
    """Lagrangian dual objective evaluated at the primal point ``T``."""
    grad = gradient_matrix(problem, plan)
    return float(objective(problem, plan)
                 - np.vdot(plan.T, grad)
                 + problem.b @ grad.min(axis=0))


def curvature_bounds(problem):
    """Per-column curvature bounds ``4 b_i^2 / lam`` and the total bound.

    The total is ``min(4 / lam, sum of block bounds)``.
    """
    block = 4.0 * problem.b ** 2 / problem.lam
    return block, float(min(4.0 / problem.lam, block.sum()))


def update_column(plan: TransportPlan, i, new_column, mass=None,
                  tol=MASS_TOL) -> TransportPlan:
    """Replace column ``i`` in place and patch the row-sum cache.

    When ``mass`` is given the new column must sum to it within ``tol``.
    Returns the same plan for chaining.
    """
    new_column = np.asarray(new_column, dtype=np.float64)
    if mass is not None:
        if np.any(new_column < 0):
            raise ConstraintError("new column has negative entries")
        if abs(new_column.sum() - mass) > tol:
            raise ConstraintError(
                f"new column sums to {new_column.sum()!r}, expected {mass!r}")
    T = plan.T
    if T.shape[1] == 1:
        # a lone column is its own row-sum vector
        T[:, 0] = new_column
        plan.row_sums = new_column.copy()
        return plan
    plan.row_sums += new_column - T[:, i]
    T[:, i] = new_column
    plan._updates += 1
    if plan._updates >= ROWSUM_REFRESH_PERIOD:
        plan.refresh()
    return plan

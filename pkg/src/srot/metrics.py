"""Evaluation metrics for transport plans and the per-epoch solver trace."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

__all__ = [
    "MetricRecord",
    "as_matrix",
    "SolverTrace",
    "TRACE_COLUMNS",
    "marginal_error",
    "sparsity",
    "matrix_error",
    "value_error",
]

# fixed column order of serialized traces
TRACE_COLUMNS = ("epoch", "wall_seconds", "objective", "gap", "marginal_error",
                 "sparsity", "matrix_error", "value_error")

ZERO_THRESHOLD = 1e-12


def as_matrix(t) -> np.ndarray:
    """Plan matrix of a ``TransportPlan``, ``LPPlan``, ``Solution`` or array.

    Arrays are taken as they are; ``ndarray.T`` would be the transpose.
    """
    if not isinstance(t, np.ndarray) and hasattr(t, "T"):
        t = t.T
    return np.asarray(t, dtype=np.float64)


def marginal_error(t, a, b) -> float:
    """``||T 1 - a|| + ||T^T 1 - b||`` with Euclidean norms."""
    T = as_matrix(t)
    return float(np.linalg.norm(T.sum(axis=1) - a) + np.linalg.norm(T.sum(axis=0) - b))


def sparsity(t, threshold=ZERO_THRESHOLD) -> float:
    """Fraction of entries whose magnitude is at most ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    T = as_matrix(t)
    return float(np.count_nonzero(np.abs(T) <= threshold) / T.size)


def matrix_error(t, t_lp) -> float:
    """Relative Frobenius distance ``||T - T_lp|| / ||T_lp||``."""
    T, L = as_matrix(t), as_matrix(t_lp)
    return float(np.linalg.norm(T - L) / np.linalg.norm(L))


def value_error(t, t_lp, C, return_flag=False):
    """Relative transport-cost error against the LP plan.

    If the LP cost is exactly zero the absolute difference is returned instead;
    with ``return_flag=True`` the result is ``(value, used_absolute)``.
    """
    T, L = as_matrix(t), as_matrix(t_lp)
    ref = float(np.vdot(L, C))
    diff = abs(float(np.vdot(T, C)) - ref)
    absolute = ref == 0.0
    val = diff if absolute else diff / abs(ref)
    return (val, absolute) if return_flag else val


@dataclass
class MetricRecord:
    epoch: int
    wall_seconds: float
    objective: float
    gap: float
    marginal_error: float
    sparsity: float
    matrix_error: float = math.nan
    value_error: float = math.nan

    def as_row(self):
        return tuple(getattr(self, name) for name in TRACE_COLUMNS)


@dataclass
class SolverTrace:
    """Ordered metric records plus run metadata.

    ``matrix_error`` and ``value_error`` are NaN unless an LP reference plan
    was supplied to the solver.
    """

    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, record: MetricRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("trace epochs must be strictly increasing")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name) -> np.ndarray:
        if name not in {f.name for f in fields(MetricRecord)}:
            raise KeyError(name)
        return np.array([getattr(r, name) for r in self.records])

    def to_dicts(self):
        return [asdict(r) for r in self.records]

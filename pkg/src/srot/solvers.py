"""Frank-Wolfe and block-coordinate Frank-Wolfe solvers for semi-relaxed OT.

One *epoch* is ``n`` inner (single column) iterations for the block-coordinate
methods and a single full iteration for plain Frank-Wolfe, so traces of both
share an x-axis.  The duality gap is evaluated every ``gap_check_period``
epochs; that work is not counted as iterations and its time is reported
separately (``trace.meta["monitor_seconds"]``).

Random numbers come from :func:`numpy.random.default_rng` (PCG64), whose
streams are identical across platforms for a given seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .core import (
    Atom,
    ConfigurationError,
    NumericError,
    SemiRelaxedProblem,
    SrotError,
    TransportPlan,
    duality_gap,
    gradient_matrix,
    linearization_gap,
    objective,
    update_column,
    vertex_plan,
)
from .metrics import (MetricRecord, SolverTrace, as_matrix, marginal_error, matrix_error,
                      sparsity, value_error)

__all__ = [
    "SolverOptions",
    "ActiveSetState",
    "GapState",
    "Solution",
    "StepRecord",
    "DegenerateDirectionError",
    "DivergenceError",
    "parse_label",
    "step_decay_fw",
    "step_decay_bcfw",
    "line_search_block",
    "line_search_full",
    "away_atom",
    "bcfw_step",
    "gap_sampler_draw",
    "solve",
]

ALGORITHMS = ("fw", "bcfw")
SAMPLINGS = ("uniform", "permutation", "gap_adaptive")
STEP_RULES = ("decay", "els")
VARIANTS = ("plain", "away", "pairwise")

DROP_THRESHOLD = 1e-12
# initial stored gap for never-visited columns
LARGE_GAP = 1e18


class DegenerateDirectionError(SrotError):
    """The search direction is identically zero; the caller skips the step."""


class DivergenceError(NumericError):
    """A non-finite objective was produced.  ``trace`` holds the records so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class SolverOptions:
    """Solver configuration.

    ``algorithm`` is ``"fw"`` or ``"bcfw"``; ``sampling`` one of ``"uniform"``,
    ``"permutation"``, ``"gap_adaptive"``; ``step_rule`` ``"decay"`` or
    ``"els"`` (exact line search); ``variant`` ``"plain"``, ``"away"`` or
    ``"pairwise"``.  Away and pairwise directions need BCFW with line search.
    """

    algorithm: str = "bcfw"
    sampling: str = "uniform"
    step_rule: str = "els"
    variant: str = "plain"
    epsilon: float = 1e-6
    max_epochs: int = 1000
    gap_check_period: int = 1
    global_refresh_m: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        for name, allowed in (("algorithm", ALGORITHMS), ("sampling", SAMPLINGS),
                              ("step_rule", STEP_RULES), ("variant", VARIANTS)):
            if getattr(self, name) not in allowed:
                raise ConfigurationError(
                    f"{name}={getattr(self, name)!r} not in {allowed}")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be at least 1")
        if self.gap_check_period < 1:
            raise ConfigurationError("gap_check_period must be at least 1")
        if self.global_refresh_m < 1:
            raise ConfigurationError("global_refresh_m must be at least 1")
        if self.variant != "plain":
            if self.algorithm != "bcfw":
                raise ConfigurationError("away/pairwise variants require bcfw")
            if self.step_rule != "els":
                raise ConfigurationError("away/pairwise variants require exact line search")

    def replace(self, **changes) -> SolverOptions:
        return replace(self, **changes)

    @property
    def label(self) -> str:
        step = "ELS" if self.step_rule == "els" else "DEC"
        if self.algorithm == "fw":
            return f"FW-{step}"
        samp = {"uniform": "U", "permutation": "P", "gap_adaptive": "GA"}[self.sampling]
        if self.variant != "plain":
            head = "BCAFW" if self.variant == "away" else "BCPFW"
            # uniform is the default for the away/pairwise variants
            return f"{head}-{step}" if samp == "U" else f"{head}-{samp}-{step}"
        return f"BCFW-{samp}-{step}"


def parse_label(label, **kwargs) -> SolverOptions:
    """Build options from a short name such as ``"BCFW-U-ELS"`` or ``"BCPFW-ELS"``.

    Away and pairwise variants use uniform sampling unless a sampling code is
    given, as in ``"BCPFW-GA-ELS"``.  Extra keyword arguments are passed to
    :class:`SolverOptions`.
    """
    parts = label.upper().split("-")
    step = {"ELS": "els", "DEC": "decay"}.get(parts[-1])
    if step is None:
        raise ConfigurationError(f"cannot parse solver label {label!r}")
    head = parts[:-1]
    if head == ["FW"]:
        return SolverOptions(algorithm="fw", step_rule=step, **kwargs)
    samplings = {"U": "uniform", "P": "permutation", "GA": "gap_adaptive"}
    variants = {"BCAFW": "away", "BCPFW": "pairwise"}
    if len(head) == 1 and head[0] in variants:
        return SolverOptions(variant=variants[head[0]], step_rule=step, **kwargs)
    if len(head) == 2 and head[1] in samplings:
        if head[0] == "BCFW":
            return SolverOptions(sampling=samplings[head[1]], step_rule=step, **kwargs)
        if head[0] in variants:
            return SolverOptions(variant=variants[head[0]], sampling=samplings[head[1]],
                                 step_rule=step, **kwargs)
    raise ConfigurationError(f"cannot parse solver label {label!r}")


class ActiveSetState:
    """Per-column maps ``row -> weight`` of the atoms ``b_i e_row`` in use.

    Weights in each column are positive and sum to one, and the column is
    ``b_i * weights`` scattered onto the listed rows.
    """

    def __init__(self, columns):
        self.columns = columns

    @classmethod
    def from_plan(cls, plan, b):
        cols = []
        for i in range(plan.T.shape[1]):
            t = plan.T[:, i]
            if b[i] > 0:
                rows = np.flatnonzero(t > 0)
                w = t[rows] / b[i]
                cols.append(dict(zip(rows.tolist(), (w / w.sum()).tolist())))
            else:
                cols.append({0: 1.0})
        return cls(cols)

    def __getitem__(self, i):
        return self.columns[i]

    def __len__(self):
        return len(self.columns)

    def reconstruct(self, i, bi, m):
        col = np.zeros(m)
        for j, w in self.columns[i].items():
            col[j] = bi * w
        return col

    def max_violation(self, plan, b):
        """Largest deviation between the plan and the atom reconstruction."""
        m = plan.T.shape[0]
        worst = 0.0
        for i, weights in enumerate(self.columns):
            if any(w <= 0 for w in weights.values()):
                return math.inf
            worst = max(worst, abs(sum(weights.values()) - 1.0),
                        np.max(np.abs(self.reconstruct(i, b[i], m) - plan.T[:, i])))
        return worst


class GapState:
    """Stored per-column gaps for sampling columns proportionally to their gap.

    Sampling weights are ``max(stored_gap, floor)``; ``cumulative`` is the
    prefix sum of those weights, rebuilt lazily after a change.
    """

    def __init__(self, n, initial=LARGE_GAP, floor=0.0):
        self.stored = np.full(n, float(initial))
        self.floor = float(floor)
        self.stale = np.zeros(n, dtype=np.int64)
        self.fallbacks = 0
        self._cumulative = None

    @property
    def n(self):
        return self.stored.size

    def set(self, i, value):
        self.stored[i] = value
        self.stale[i] = 0
        self._cumulative = None

    def set_all(self, values):
        self.stored[:] = values
        self.stale[:] = 0
        self._cumulative = None

    def tick(self):
        self.stale += 1

    @property
    def cumulative(self) -> np.ndarray:
        if self._cumulative is None:
            self._cumulative = np.cumsum(np.maximum(self.stored, self.floor))
        return self._cumulative

    def probabilities(self) -> np.ndarray:
        w = np.maximum(self.stored, self.floor)
        total = w.sum()
        if total <= 0:
            return np.full(self.n, 1.0 / self.n)
        return w / total


def gap_sampler_draw(state: GapState, rng) -> int:
    """Draw a column with probability proportional to its clamped stored gap.

    Binary search over the prefix sums.  If every weight is zero the draw is
    uniform and ``state.fallbacks`` is incremented.
    """
    cum = state.cumulative
    total = cum[-1]
    if not total > 0:
        state.fallbacks += 1
        return int(rng.integers(state.n))
    u = rng.random() * total
    i = int(np.searchsorted(cum, u, side="right"))
    if i >= state.n:
        # u rounded up onto the total: take the last positive-weight column
        i = int(np.flatnonzero(np.maximum(state.stored, state.floor) > 0)[-1])
    return i


class StepRecord(NamedTuple):
    column: int
    kind: str  # "fw", "away", "pairwise" or "skip"
    gamma: float
    gamma_max: float
    fw_row: int
    away_row: int = -1
    dropped: int = 0


@dataclass
class Solution:
    plan: TransportPlan
    final_gap: float
    epochs: int
    trace: SolverTrace
    converged: bool
    iterations: int = 0
    active_set: Optional[ActiveSetState] = None
    snapshots: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.plan.T


def step_decay_fw(k) -> float:
    """``2 / (k + 2)``."""
    if k < 0:
        raise ValueError("iteration must be nonnegative")
    return 2.0 / (k + 2.0)


def step_decay_bcfw(k, n) -> float:
    """``2n / (k + 2n)``; equal to :func:`step_decay_fw` when ``n == 1``."""
    if k < 0 or n < 1:
        raise ValueError("need k >= 0 and n >= 1")
    return 2.0 * n / (k + 2.0 * n)


def line_search_block(problem, plan, i, d, gamma_max=1.0) -> float:
    """Exact minimizer of ``f`` along ``t_i + gamma * d`` clamped to ``[0, gamma_max]``.

    Raises
    ------
    DegenerateDirectionError
        If ``d`` is the zero vector.
    """
    d = np.asarray(d, dtype=np.float64)
    dd = float(d @ d)
    if dd == 0.0:
        raise DegenerateDirectionError(f"zero direction on column {i}")
    num = problem.lam * (d @ problem.C[:, i]) + d @ (plan.row_sums - problem.a)
    return min(max(-num / dd, 0.0), float(gamma_max))


def line_search_full(problem, plan, S):
    """Exact line search for the full Frank-Wolfe step ``(1 - gamma) T + gamma S``.

    Returns ``(gamma, flat)``.  ``flat`` is True when ``S 1 == T 1`` so the
    objective is linear along the segment; gamma is then 1 if that line
    descends and 0 otherwise.
    """
    S = np.asarray(S, dtype=np.float64)
    diff_rows = plan.row_sums - S.sum(axis=1)
    lin = problem.lam * np.vdot(plan.T - S, problem.C)
    den = float(diff_rows @ diff_rows)
    if den == 0.0:
        return (1.0 if lin > 0 else 0.0), True
    num = lin + diff_rows @ (plan.row_sums - problem.a)
    return min(max(float(num / den), 0.0), 1.0), False


def away_atom(problem, plan, i, active, grad=None) -> Atom:
    """Active atom of column ``i`` with the largest partial gradient (lowest row on ties)."""
    weights = active[i]
    if not weights:
        raise SrotError(f"active set of column {i} is empty")
    if grad is None:
        grad = problem.C[:, i] + (plan.row_sums - problem.a) / problem.lam
    best = None
    for j in sorted(weights):
        if best is None or grad[j] > grad[best]:
            best = j
    return Atom(i, best, float(problem.b[i]))


def _set_weights(weights, active, i, target_row):
    """Drop tiny atoms, moving their weight to ``target_row``, and renormalize."""
    dropped = 0
    for j in [j for j, w in weights.items() if w < DROP_THRESHOLD]:
        w = weights.pop(j)
        dropped += 1
        if j != target_row and target_row in weights:
            weights[target_row] += w
    total = sum(weights.values())
    if total != 1.0:
        for j in weights:
            weights[j] /= total
    active.columns[i] = weights
    return dropped


def bcfw_step(problem: SemiRelaxedProblem, plan: TransportPlan, i, opts: SolverOptions,
              k=0, active: ActiveSetState = None, gaps: GapState = None) -> StepRecord:
    """One block update of column ``i`` (plain, away or pairwise direction).

    ``k`` is the global inner-iteration counter used by the decay rule.  The
    plan, the active set and the stored gap of column ``i`` are updated in
    place.
    """
    m = problem.m
    bi = problem.b[i]
    t = plan.T[:, i]
    grad = problem.C[:, i] + (plan.row_sums - problem.a) / problem.lam
    s = int(np.argmin(grad))

    if opts.variant == "plain":
        d = -t.copy()
        d[s] += bi
        try:
            if opts.step_rule == "els":
                gamma = line_search_block(problem, plan, i, d, 1.0)
            else:
                if not d.any():
                    raise DegenerateDirectionError("zero direction")
                gamma = step_decay_bcfw(k, problem.n)
        except DegenerateDirectionError:
            rec = StepRecord(i, "skip", 0.0, 1.0, s)
        else:
            new = (1.0 - gamma) * t
            new[s] += gamma * bi
            update_column(plan, i, new)
            if active is not None:
                weights = active[i]
                if gamma == 1.0:
                    weights = {s: 1.0}
                else:
                    for j in weights:
                        weights[j] *= 1.0 - gamma
                    weights[s] = weights.get(s, 0.0) + gamma
                active.columns[i] = weights
                _set_weights(weights, active, i, s)
            rec = StepRecord(i, "fw", gamma, 1.0, s)
    else:
        weights = active[i]
        v = away_atom(problem, plan, i, active, grad).row
        alpha_v = weights[v]
        tg = t @ grad
        fw_score = tg - bi * grad[s]  # <-grad, d_fw>
        away_score = bi * grad[v] - tg  # <-grad, d_away>
        if opts.variant == "pairwise":
            kind, gamma_max = "pairwise", alpha_v
            d = np.zeros(m)
            d[s] += bi
            d[v] -= bi
        elif fw_score >= away_score or alpha_v >= 1.0:
            kind, gamma_max = "fw", 1.0
            d = -t.copy()
            d[s] += bi
        else:
            kind, gamma_max = "away", alpha_v / (1.0 - alpha_v)
            d = t.copy()
            d[v] -= bi
        try:
            gamma = line_search_block(problem, plan, i, d, gamma_max)
        except DegenerateDirectionError:
            rec = StepRecord(i, "skip", 0.0, gamma_max, s, v)
        else:
            if kind == "pairwise":
                weights[s] = weights.get(s, 0.0) + gamma
                weights[v] = 0.0 if gamma == gamma_max else weights[v] - gamma
            elif kind == "fw":
                if gamma == 1.0:
                    weights = {s: 1.0}
                else:
                    for j in weights:
                        weights[j] *= 1.0 - gamma
                    weights[s] = weights.get(s, 0.0) + gamma
            else:
                for j in weights:
                    weights[j] *= 1.0 + gamma
                weights[v] = 0.0 if gamma == gamma_max else weights[v] - gamma
            # tiny leftovers go to the lowest-gradient surviving atom
            target = min(weights, key=lambda j: (grad[j], j))
            dropped = _set_weights(weights, active, i, target)
            new = np.zeros(m)
            for j, w in active[i].items():
                new[j] = bi * w
            update_column(plan, i, new)
            rec = StepRecord(i, kind, gamma, gamma_max, s, v, dropped)

    if gaps is not None:
        g = problem.C[:, i] + (plan.row_sums - problem.a) / problem.lam
        gaps.set(i, float(plan.T[:, i] @ g - bi * g.min()))
    return rec


def _record(problem, plan, epoch, wall, gap, lp_plan):
    T = plan.T
    if lp_plan is not None:
        L = as_matrix(lp_plan)
        e_m = matrix_error(T, L)
        e_v = value_error(T, L, problem.C)
    else:
        e_m = e_v = math.nan
    return MetricRecord(epoch=epoch, wall_seconds=wall,
                        objective=objective(problem, plan), gap=gap,
                        marginal_error=marginal_error(T, problem.a, problem.b),
                        sparsity=sparsity(T), matrix_error=e_m, value_error=e_v)


class _Monitor:
    """Gap checks and trace recording, timed apart from the solver work."""

    def __init__(self, problem, plan, trace, lp_plan, snapshot_epochs):
        self.problem = problem
        self.plan = plan
        self.trace = trace
        self.lp_plan = lp_plan
        self.snapshot_epochs = set(snapshot_epochs)
        self.snapshots = {}
        self.solver_seconds = 0.0
        self.monitor_seconds = 0.0
        self._t = None

    def start(self):
        self._t = time.perf_counter()

    def stop(self):
        self.solver_seconds += time.perf_counter() - self._t

    def snapshot(self, epoch):
        if epoch in self.snapshot_epochs:
            self.snapshots[epoch] = self.plan.T.copy()

    def check(self, epoch):
        t0 = time.perf_counter()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                report = duality_gap(self.problem, self.plan)
                rec = _record(self.problem, self.plan, epoch, self.solver_seconds,
                              report.total, self.lp_plan)
        except NumericError as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}", self.trace) from exc
        if not (math.isfinite(rec.objective) and math.isfinite(report.total)):
            raise DivergenceError(f"non-finite objective at epoch {epoch}", self.trace)
        self.trace.append(rec)
        self.snapshot(epoch)
        self.monitor_seconds += time.perf_counter() - t0
        return report


def solve(problem: SemiRelaxedProblem, opts: SolverOptions = None, *,
          plan: TransportPlan = None, lp_plan=None,
          callback: Callable = None, snapshot_epochs=()) -> Solution:
    """Run FW or BCFW until the duality gap drops to ``opts.epsilon``.

    Parameters
    ----------
    problem : SemiRelaxedProblem
    opts : SolverOptions
    plan : TransportPlan, optional
        Starting point; defaults to all column mass on the first row.
    lp_plan : array or LPPlan, optional
        Exact transport plan used for the matrix and value errors in the trace.
    callback : callable, optional
        Called as ``callback(k, plan)`` after every inner iteration ``k``
        (1-based); for FW an iteration is a full update.
    snapshot_epochs : iterable of int
        Epochs at which a copy of ``T`` is stored in ``Solution.snapshots``.

    Returns
    -------
    Solution
    """
    opts = opts or SolverOptions()
    plan = vertex_plan(problem) if plan is None else plan.copy()
    plan.check(problem.b)
    meta = {"options": asdict(opts), "label": opts.label, "seed": opts.rng_seed,
            "instance": problem.digest(), "shape": list(problem.shape),
            "lam": problem.lam}
    trace = SolverTrace(meta=meta)
    mon = _Monitor(problem, plan, trace, lp_plan, snapshot_epochs)
    if opts.algorithm == "fw":
        final_gap, epochs, iterations = _solve_fw(problem, opts, plan, mon, callback)
        active = None
    else:
        (final_gap, epochs, iterations), active = _solve_bcfw(
            problem, opts, plan, mon, callback, meta)
    meta["monitor_seconds"] = mon.monitor_seconds
    meta["solver_seconds"] = mon.solver_seconds
    return Solution(plan=plan, final_gap=final_gap, epochs=epochs, trace=trace,
                    converged=final_gap <= opts.epsilon, iterations=iterations,
                    active_set=active, snapshots=mon.snapshots)


def _solve_fw(problem, opts, plan, mon, callback):
    cols = np.arange(problem.n)
    k = 0
    while True:
        report = mon.check(k)
        if report.total <= opts.epsilon or k == opts.max_epochs:
            return report.total, k, k
        mon.start()
        S = np.zeros(problem.shape)
        S[report.argmin_rows, cols] = problem.b
        if opts.step_rule == "els":
            gamma, _ = line_search_full(problem, plan, S)
        else:
            gamma = step_decay_fw(k)
        plan.T = (1.0 - gamma) * plan.T + gamma * S
        plan.refresh()
        k += 1
        if callback is not None:
            callback(k, plan)
        mon.stop()


def _solve_bcfw(problem, opts, plan, mon, callback, meta):
    n = problem.n
    rng = np.random.default_rng(opts.rng_seed)
    active = ActiveSetState.from_plan(plan, problem.b) if opts.variant != "plain" else None
    gaps = GapState(n) if opts.sampling == "gap_adaptive" else None
    refresh_every = opts.global_refresh_m * n

    final_gap = mon.check(0).total
    k = 0
    epoch = 0
    while final_gap > opts.epsilon and epoch < opts.max_epochs:
        epoch += 1
        mon.start()
        if opts.sampling == "uniform":
            order = rng.integers(0, n, size=n)
        elif opts.sampling == "permutation":
            order = rng.permutation(n)
        else:
            order = None
        for step in range(n):
            if order is None:
                i = gap_sampler_draw(gaps, rng)
                gaps.tick()
            else:
                i = int(order[step])
            bcfw_step(problem, plan, i, opts, k, active, gaps)
            k += 1
            if gaps is not None and k % refresh_every == 0:
                grad = gradient_matrix(problem, plan)
                gaps.set_all(linearization_gap(plan.T, grad, problem.b))
                meta.setdefault("first_global_refresh", k)
            if callback is not None:
                callback(k, plan)
        mon.stop()
        if epoch % opts.gap_check_period == 0 or epoch == opts.max_epochs:
            final_gap = mon.check(epoch).total
        else:
            mon.snapshot(epoch)
    if gaps is not None:
        meta["uniform_fallbacks"] = gaps.fallbacks
    return (final_gap, epoch, k), active

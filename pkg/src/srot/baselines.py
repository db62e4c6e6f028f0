"""Reference solvers: projected gradient, FISTA, an exact LP transport oracle and
a certified reference optimum for the semi-relaxed problem."""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    ConfigurationError,
    SrotError,
    TransportPlan,
    duality_gap,
    objective,
    vertex_plan,
)
from .metrics import SolverTrace
from .solvers import DivergenceError, Solution, SolverOptions, _record, solve

__all__ = [
    "LPPlan",
    "ReferenceOptimum",
    "project_scaled_simplex",
    "project_columns",
    "pgd_solve",
    "fista_solve",
    "lp_transport_solve",
    "reference_optimum",
]


def project_scaled_simplex(v, mass):
    """Euclidean projection of ``v`` onto ``{x >= 0 : sum(x) = mass}``.

    Sort-and-threshold method, O(m log m).
    """
    v = np.asarray(v, dtype=np.float64)
    if mass < 0:
        raise ConfigurationError("mass must be nonnegative")
    if mass == 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - mass
    ind = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def project_columns(V, masses):
    """Project every column ``V[:, i]`` onto the simplex of mass ``masses[i]``."""
    V = np.asarray(V, dtype=np.float64)
    m = V.shape[0]
    U = -np.sort(-V, axis=0)
    css = np.cumsum(U, axis=0) - masses
    ind = np.arange(1, m + 1)[:, None]
    cond = U - css / ind > 0
    # last index where the condition holds (it always holds at row 0)
    rho = m - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(V.shape[1])] / (rho + 1)
    out = np.maximum(V - theta, 0.0)
    out[:, masses == 0] = 0.0
    return out


def _proximal_solve(problem, accelerated, stepsize, max_iters, tol, plan,
                    lp_plan, record_every):
    if stepsize is None:
        stepsize = problem.lam / problem.n
    if not 0 < stepsize <= problem.lam / problem.n * (1 + 1e-12):
        raise ConfigurationError("stepsize must lie in (0, lam / n]")
    plan = vertex_plan(problem) if plan is None else plan.copy()
    C, a, b, lam = problem.C, problem.a, problem.b, problem.lam
    trace = SolverTrace(meta={"label": "FISTA" if accelerated else "PGD",
                              "instance": problem.digest(), "stepsize": stepsize,
                              "shape": list(problem.shape), "lam": lam})
    x = plan.T
    y = x.copy()
    t_k = 1.0
    solver_time = 0.0
    gap = math.inf
    k = 0
    while True:
        report = duality_gap(problem, plan)
        gap = report.total
        if k % record_every == 0 or gap <= tol or k == max_iters:
            rec = _record(problem, plan, k, solver_time, gap, lp_plan)
            if not math.isfinite(rec.objective):
                raise DivergenceError(f"non-finite objective at iteration {k}", trace)
            trace.append(rec)
        if gap <= tol or k == max_iters:
            break
        t0 = time.perf_counter()
        src = y if accelerated else x
        grad = C + ((src.sum(axis=1) - a) / lam)[:, None]
        x_new = project_columns(src - stepsize * grad, b)
        if accelerated:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
            y = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
            t_k = t_next
        x = x_new
        plan.T = x
        plan.refresh()
        k += 1
        solver_time += time.perf_counter() - t0
    return Solution(plan=plan, final_gap=gap, epochs=k, trace=trace,
                    converged=gap <= tol, iterations=k)


def pgd_solve(problem, stepsize=None, max_iters=10000, tol=1e-9, *, plan=None,
              lp_plan=None, record_every=1) -> Solution:
    """Projected gradient descent on the product of column simplices.

    The default stepsize ``lam / n`` is the inverse Lipschitz constant of the
    gradient.  Stops when the duality gap is at most ``tol``.
    """
    return _proximal_solve(problem, False, stepsize, max_iters, tol, plan,
                           lp_plan, record_every)


def fista_solve(problem, stepsize=None, max_iters=10000, tol=1e-9, *, plan=None,
                lp_plan=None, record_every=1) -> Solution:
    """Accelerated (FISTA) variant of :func:`pgd_solve`."""
    return _proximal_solve(problem, True, stepsize, max_iters, tol, plan,
                           lp_plan, record_every)


# ---------------------------------------------------------------------------
# exact transport LP


@dataclass(frozen=True, eq=False)
class LPPlan:
    """Optimal plan of the balanced transport LP.

    ``basis`` lists the ``(row, col)`` cells of the final basis tree and
    ``min_reduced_cost`` is the smallest reduced cost over all cells.
    """

    T: np.ndarray
    cost: float
    basis_size: int
    basis: tuple = ()
    min_reduced_cost: float = 0.0
    pivots: int = 0


def _tree_flows(basis, a, b):
    """Flows on a spanning-tree basis, obtained by peeling leaves."""
    m, n = a.size, b.size
    adj = [set() for _ in range(m + n)]
    for i, j in basis:
        adj[i].add(m + j)
        adj[m + j].add(i)
    rem = np.concatenate([a, b]).astype(np.float64)
    flows = {}
    leaves = deque(v for v in range(m + n) if len(adj[v]) == 1)
    while leaves:
        v = leaves.popleft()
        if len(adj[v]) != 1:
            continue
        w = adj[v].pop()
        adj[w].discard(v)
        cell = (v, w - m) if v < m else (w, v - m)
        flows[cell] = rem[v]
        rem[w] -= rem[v]
        rem[v] = 0.0
        if len(adj[w]) == 1:
            leaves.append(w)
    return flows


def _duals(basis_adj, C, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [0]
    while stack:
        node = stack.pop()
        for other in basis_adj[node]:
            if node < m:
                j = other - m
                if np.isnan(v[j]):
                    v[j] = C[node, j] - u[node]
                    stack.append(other)
            else:
                i = other
                if np.isnan(u[i]):
                    u[i] = C[i, node - m] - v[node - m]
                    stack.append(other)
    return u, v


def _tree_path(adj, src, dst):
    prev = {src: None}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        if node == dst:
            break
        for other in adj[node]:
            if other not in prev:
                prev[other] = node
                queue.append(other)
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    return path[::-1]


def lp_transport_solve(C, a, b, tol=1e-9, max_pivots=None, perturbation=1e-12,
                       pricing="dantzig") -> LPPlan:
    """Exact optimal transport plan by the transportation simplex method.

    North-west corner start and MODI (u-v) duals.  With ``pricing="bland"``
    the entering cell is the lowest flat index with negative reduced cost;
    ``"dantzig"`` takes the most negative one (lowest index on ties) and
    switches to Bland's rule for good after a degenerate pivot.  The leaving
    cell is the lowest-index cell among the tied minimum flows.  Supplies are
    perturbed by ``perturbation`` (and the last demand by ``m * perturbation``)
    so every basis is nondegenerate; the final flows are recomputed on the
    optimal basis tree with the original marginals.
    """
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    m, n = C.shape
    if (a.size, b.size) != (m, n):
        raise ConfigurationError("marginal sizes do not match the cost matrix")
    if np.any(a < 0) or np.any(b < 0):
        raise ConfigurationError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-10:
        raise ConfigurationError(f"unbalanced marginals: {a.sum()!r} vs {b.sum()!r}")
    if pricing not in ("dantzig", "bland"):
        raise ConfigurationError(f"unknown pricing rule {pricing!r}")
    bland = pricing == "bland"
    if max_pivots is None:
        max_pivots = 50 * (m * n + 10) * (m + n)

    ra = a + perturbation
    rb = b.copy()
    rb[-1] += m * perturbation
    X = {}
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        X[(i, j)] = q
        ra[i] -= q
        rb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if (ra[i] <= rb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1

    adj = [set() for _ in range(m + n)]
    for (i, j) in X:
        adj[i].add(m + j)
        adj[m + j].add(i)

    pivots = 0
    while True:
        u, v = _duals(adj, C, m, n)
        red = C - u[:, None] - v[None, :]
        flat = red.ravel()
        if bland:
            neg = np.flatnonzero(flat < -tol)
            if neg.size == 0:
                break
            enter = int(neg[0])
        else:
            enter = int(np.argmin(flat))
            if not flat[enter] < -tol:
                break
        if pivots >= max_pivots:
            raise SrotError("transportation simplex exceeded its pivot budget")
        p, q = divmod(enter, n)
        path = _tree_path(adj, p, m + q)
        edges = [(path[k], path[k + 1]) for k in range(len(path) - 1)]
        cells = [(x, y - m) if x < m else (y, x - m) for x, y in edges]
        minus = cells[0::2]
        plus = cells[1::2]
        theta, _, leave = min((X[c], c[0] * n + c[1], c) for c in minus)
        if theta == 0.0:
            bland = True
        for c in minus:
            X[c] -= theta
        for c in plus:
            X[c] += theta
        X[(p, q)] = theta
        del X[leave]
        adj[leave[0]].discard(m + leave[1])
        adj[m + leave[1]].discard(leave[0])
        adj[p].add(m + q)
        adj[m + q].add(p)
        pivots += 1

    basis = tuple(sorted(X))
    flows = _tree_flows(basis, a, b)
    T = np.zeros((m, n))
    for (i, j), f in flows.items():
        T[i, j] = f
    # exact degeneracy leaves round-off sized negatives
    T[(T < 0) & (T > -1e-9)] = 0.0
    u, v = _duals(adj, C, m, n)
    red = C - u[:, None] - v[None, :]
    return LPPlan(T=T, cost=float(np.vdot(T, C)), basis_size=len(basis),
                  basis=basis, min_reduced_cost=float(red.min()), pivots=pivots)


# ---------------------------------------------------------------------------
# certified reference optimum


class ReferenceOptimum(NamedTuple):
    f_star: float
    plan: TransportPlan
    gap: float
    certified: bool


def reference_optimum(problem, tol=1e-10, method="fista+bcpfw", fista_iters=3000,
                      max_epochs=200000, seed=0) -> ReferenceOptimum:
    """Objective value certified to within ``tol`` of the optimum.

    ``method`` is ``"fista+bcpfw"`` (FISTA warm start polished by pairwise
    BCFW with line search), ``"fista"`` or ``"bcpfw"``.  The duality gap of the
    returned plan bounds ``f_star - f*``; ``certified`` is False if the budget
    ran out first.
    """
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    if method not in ("fista+bcpfw", "fista", "bcpfw"):
        raise ConfigurationError(f"unknown method {method!r}")
    plan = None
    gap = math.inf
    if method != "bcpfw":
        iters = fista_iters if method == "fista+bcpfw" else max_epochs
        sol = fista_solve(problem, max_iters=iters, tol=tol, record_every=iters)
        plan, gap = sol.plan, sol.final_gap
    if method != "fista" and gap > tol:
        opts = SolverOptions(variant="pairwise", epsilon=tol, max_epochs=max_epochs,
                             rng_seed=seed)
        sol = solve(problem, opts, plan=plan)
        plan, gap = sol.plan, sol.final_gap
    plan.refresh()
    gap = duality_gap(problem, plan).total
    return ReferenceOptimum(objective(problem, plan), plan, gap, gap <= tol)

"""Randomized property batteries behind ``srot verify``.

Each check draws its own instances from a seeded generator and returns a
:class:`PropertyResult`.  The oracles here avoid the code paths they test:
the duality gap is recomputed from a gradient function, curvature quotients
from full objective evaluations, line searches against a dense grid and the
LP solver against brute-force enumeration of spanning-tree bases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baselines import lp_transport_solve
from .core import (
    SemiRelaxedProblem,
    TransportPlan,
    curvature_bounds,
    gradient_matrix,
    lagrangian_dual_value,
    linearization_gap,
    random_problem,
)
from .solvers import (
    ActiveSetState,
    SolverOptions,
    bcfw_step,
    line_search_block,
    line_search_full,
)

__all__ = [
    "PropertyResult",
    "random_feasible_plan",
    "objective_dense",
    "spanning_tree_count",
    "enumerate_bases",
    "brute_force_transport",
    "check_gap_equivalence",
    "check_curvature",
    "check_conservation",
    "check_line_search",
    "check_lp_oracle",
    "run_suite",
    "format_table",
]

# exhaustive basis enumeration is used when K_{m,n} has at most this many trees
ENUMERATION_CAP = 20000


@dataclass
class PropertyResult:
    name: str
    passed: bool
    checked: int
    worst: float
    tolerance: float
    detail: str = ""


def random_feasible_plan(rng, b, m, sparse_prob=0.3) -> TransportPlan:
    """Random nonnegative plan with column sums ``b``; some entries zeroed."""
    T = rng.random((m, b.size))
    T[rng.random(T.shape) < sparse_prob] = 0.0
    empty = T.sum(axis=0) == 0
    T[rng.integers(0, m, size=int(empty.sum())), np.flatnonzero(empty)] = 1.0
    return TransportPlan(T * (b / T.sum(axis=0)))


def objective_dense(p: SemiRelaxedProblem, T) -> float:
    """Objective evaluated from scratch, ignoring any cached row sums."""
    r = np.asarray(T).sum(axis=1) - p.a
    return float(np.vdot(T, p.C) + r @ r / (2.0 * p.lam))


def _random_instance(rng, size_range, lam_range=(1e-3, 1.0)):
    lo, hi = size_range
    m, n = (int(x) for x in rng.integers(lo, hi + 1, size=2))
    lam = float(10 ** rng.uniform(math.log10(lam_range[0]), math.log10(lam_range[1])))
    return random_problem(m, n, lam, rng=rng)


def check_gap_equivalence(seed=0, count=200, sizes=(2, 16), grad_fn=gradient_matrix,
                          tol=1e-9) -> PropertyResult:
    """Gap from ``grad_fn`` versus ``f - w`` with ``w`` the Lagrangian dual value."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        p = _random_instance(rng, sizes)
        plan = random_feasible_plan(rng, p.b, p.m)
        g = float(linearization_gap(plan.T, grad_fn(p, plan), p.b).sum())
        f = objective_dense(p, plan.T)
        err = abs(g - (f - lagrangian_dual_value(p, plan))) / (1.0 + abs(f))
        worst = max(worst, err)
    return PropertyResult("gap equivalence", worst <= tol, count, worst, tol)


def check_curvature(seed=0, instances=20, samples=10000, sizes=(2, 16),
                    slack=1e-9) -> PropertyResult:
    """Sampled block curvature quotients against ``4 b_i^2 / lam``.

    Reports the largest excess ``quotient - bound`` (negative when all pass).
    """
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(instances):
        p = _random_instance(rng, sizes)
        block, _ = curvature_bounds(p)
        m, n = p.shape
        cols = rng.integers(0, n, size=samples)
        T = rng.random((samples, m, n)) * (rng.random((samples, m, n)) > 0.3) + 1e-300
        T *= p.b / T.sum(axis=1, keepdims=True)
        s = rng.random((samples, m)) * (rng.random((samples, m)) > 0.5) + 1e-300
        bi = p.b[cols]
        s *= (bi / s.sum(axis=1))[:, None]
        gamma = rng.uniform(1e-3, 1.0, size=samples)
        idx = np.arange(samples)
        t_i = T[idx, :, cols]
        Y = T.copy()
        Y[idx, :, cols] = t_i + gamma[:, None] * (s - t_i)

        def f(X):
            r = X.sum(axis=2) - p.a
            return np.einsum("kij,ij->k", X, p.C) + (r * r).sum(axis=1) / (2 * p.lam)

        grad_i = p.C[:, cols].T + (T.sum(axis=2) - p.a) / p.lam
        lin = ((Y[idx, :, cols] - t_i) * grad_i).sum(axis=1)
        quotient = 2.0 / gamma ** 2 * (f(Y) - f(T) - lin)
        worst = max(worst, float(np.max(quotient - block[cols])))
    return PropertyResult("curvature bound", worst <= slack, instances * samples,
                          worst, slack)


_STEP_OPTIONS = (
    SolverOptions(step_rule="els"),
    SolverOptions(step_rule="decay"),
    SolverOptions(variant="away"),
    SolverOptions(variant="pairwise"),
)


def check_conservation(seed=0, steps=10000, sizes=(2, 16), tol=1e-10) -> PropertyResult:
    """Column masses and nonnegativity after random block steps of every variant."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < steps:
        p = _random_instance(rng, sizes)
        opts = _STEP_OPTIONS[int(rng.integers(len(_STEP_OPTIONS)))]
        plan = random_feasible_plan(rng, p.b, p.m)
        active = ActiveSetState.from_plan(plan, p.b) if opts.variant != "plain" else None
        for k in range(min(200, steps - done)):
            bcfw_step(p, plan, int(rng.integers(p.n)), opts, k, active)
            done += 1
        dev = float(np.max(np.abs(plan.T.sum(axis=0) - p.b)))
        neg = float(max(0.0, -plan.T.min()))
        worst = max(worst, dev, neg)
    return PropertyResult("feasibility conservation", worst <= tol, done, worst, tol)


def check_line_search(seed=0, count=100, sizes=(2, 16), grid=1001,
                      slack=1e-12) -> PropertyResult:
    """Exact line search values versus a uniform grid on ``[0, gamma_max]``.

    Block directions of plain, away and pairwise type are drawn in turn, and
    every fourth case checks the full Frank-Wolfe line search instead.
    """
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for case in range(count):
        p = _random_instance(rng, sizes)
        plan = random_feasible_plan(rng, p.b, p.m)
        G = gradient_matrix(p, plan)
        gammas = np.linspace(0.0, 1.0, grid)
        if case % 4 == 3:
            S = np.zeros(p.shape)
            S[np.argmin(G, axis=0), np.arange(p.n)] = p.b
            gamma, _ = line_search_full(p, plan, S)
            path = lambda g: (1 - g) * plan.T + g * S  # noqa: E731
        else:
            i = int(rng.integers(p.n))
            t = plan.T[:, i]
            s = int(np.argmin(G[:, i]))
            support = np.flatnonzero(t > 0)
            v = int(support[np.argmax(G[support, i])])
            alpha_v = t[v] / p.b[i]
            kind = case % 4
            d = -t.copy()
            gamma_max = 1.0
            if kind == 0:
                d[s] += p.b[i]
            elif kind == 1 and alpha_v < 1.0:
                d = t.copy()
                d[v] -= p.b[i]
                gamma_max = alpha_v / (1.0 - alpha_v)
            else:
                d = np.zeros(p.m)
                d[s] += p.b[i]
                d[v] -= p.b[i]
                gamma_max = alpha_v
            if not d.any():
                continue
            gamma = line_search_block(p, plan, i, d, gamma_max)
            gammas = gammas * gamma_max

            def path(g, i=i, d=d):
                X = plan.T.copy()
                X[:, i] += g * d
                return X
        f_ls = objective_dense(p, path(gamma))
        f_grid = min(objective_dense(p, path(g)) for g in gammas)
        worst = max(worst, f_ls - f_grid)
    return PropertyResult("line-search optimality", worst <= slack, count, worst, slack)


def spanning_tree_count(m, n) -> int:
    """Number of spanning trees of the complete bipartite graph ``K_{m,n}``."""
    return m ** (n - 1) * n ** (m - 1)


def enumerate_bases(m, n):
    """Yield every spanning tree of ``K_{m,n}`` as a list of ``(row, col)`` cells."""
    cells = [(i, j) for i in range(m) for j in range(n)]
    size = m + n - 1

    def find(parent, x):
        while parent[x] != x:
            x = parent[x]
        return x

    def rec(start, chosen, parent):
        if len(chosen) == size:
            yield list(chosen)
            return
        for idx in range(start, len(cells) - (size - len(chosen)) + 1):
            i, j = cells[idx]
            ri, rj = find(parent, i), find(parent, m + j)
            if ri == rj:
                continue
            child = parent.copy()
            child[ri] = rj
            chosen.append(cells[idx])
            yield from rec(idx + 1, chosen, child)
            chosen.pop()

    yield from rec(0, [], list(range(m + n)))


def brute_force_transport(C, a, b, tol=1e-12):
    """Minimum cost over all basic feasible solutions of the transport LP.

    Every spanning tree of ``K_{m,n}`` is a candidate basis; its flows solve
    the marginal equations restricted to the tree.  Returns ``(cost, T)``.
    """
    C = np.asarray(C, dtype=np.float64)
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        for j in range(n):
            A[i, i * n + j] = 1.0
            A[m + j, i * n + j] = 1.0
    rhs = np.concatenate([a, b])
    best, best_T = math.inf, None
    for basis in enumerate_bases(m, n):
        cols = [i * n + j for i, j in basis]
        x, *_ = np.linalg.lstsq(A[:, cols], rhs, rcond=None)
        if x.min() < -tol:
            continue
        cost = float(sum(C[i, j] * f for (i, j), f in zip(basis, x)))
        if cost < best:
            best = cost
            best_T = np.zeros((m, n))
            for (i, j), f in zip(basis, x):
                best_T[i, j] = max(f, 0.0)
    return best, best_T


def _grid_histogram(rng, k, units=12):
    w = rng.integers(1, units + 1, size=k).astype(np.float64)
    return w / w.sum()


def check_lp_oracle(seed=0, count=50, sizes=(2, 8), tol=1e-9,
                    certificate_sizes=(16, 32, 64), highs_every=5) -> PropertyResult:
    """Transport simplex against exhaustive basis enumeration.

    Shapes are drawn from ``sizes`` among those whose spanning-tree count is
    at most ``ENUMERATION_CAP``, except that every ``highs_every``-th instance
    (0 disables this) may take any shape and is compared with the HiGHS LP
    solver when enumeration is out of reach.  The reduced-cost certificate and both marginals are
    also checked on square instances of ``certificate_sizes``.
    """
    from scipy.optimize import linprog

    rng = np.random.default_rng(seed)
    lo, hi = sizes
    shapes = [(m, n) for m in range(lo, hi + 1) for n in range(lo, hi + 1)]
    small = [s for s in shapes if spanning_tree_count(*s) <= ENUMERATION_CAP]
    worst = 0.0
    enumerated = highs = 0
    for k in range(count):
        any_shape = highs_every and k % highs_every == highs_every - 1
        pool = shapes if any_shape or not small else small
        m, n = pool[int(rng.integers(len(pool)))]
        C = rng.random((m, n))
        a, b = _grid_histogram(rng, m), _grid_histogram(rng, n)
        lp = lp_transport_solve(C, a, b)
        if spanning_tree_count(m, n) <= ENUMERATION_CAP:
            ref, _ = brute_force_transport(C, a, b)
            enumerated += 1
        else:
            A_eq = np.vstack([np.kron(np.eye(m), np.ones(n)), np.kron(np.ones(m), np.eye(n))])
            res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]),
                          bounds=(0, None), method="highs")
            ref = float(res.fun)
            highs += 1
        worst = max(worst, abs(lp.cost - ref), -lp.min_reduced_cost,
                    float(np.abs(lp.T.sum(axis=1) - a).max()),
                    float(np.abs(lp.T.sum(axis=0) - b).max()))
    for size in certificate_sizes:
        C = rng.random((size, size))
        a, b = _grid_histogram(rng, size, 50), _grid_histogram(rng, size, 50)
        lp = lp_transport_solve(C, a, b)
        worst = max(worst, -lp.min_reduced_cost,
                    float(np.abs(lp.T.sum(axis=1) - a).max()),
                    float(np.abs(lp.T.sum(axis=0) - b).max()))
    detail = f"{enumerated} enumerated, {highs} via HiGHS"
    return PropertyResult("LP oracle equivalence", worst <= tol,
                          count + len(certificate_sizes), worst, tol, detail)


def _perturbed_gradient(p, plan):
    G = gradient_matrix(p, plan)
    return G + 1e-3 * (1.0 + np.abs(G))


def run_suite(seeds=20, sizes=(2, 16), seed=0, perturb_gradient=False,
              lp_sizes=None, quick=False):
    """Run all batteries; ``seeds`` scales the instance counts.

    ``perturb_gradient`` feeds a deliberately wrong gradient to the gap
    equivalence check, which must then fail.
    """
    grad_fn = _perturbed_gradient if perturb_gradient else gradient_matrix
    scale = max(1, seeds)
    lp_lo, lp_hi = lp_sizes or (sizes[0], min(sizes[1], 8))
    samples = 1000 if quick else 10000
    return [
        check_gap_equivalence(seed, count=10 * scale, sizes=sizes, grad_fn=grad_fn),
        check_curvature(seed, instances=scale, samples=samples, sizes=sizes),
        check_conservation(seed, steps=500 * scale, sizes=sizes),
        check_line_search(seed, count=5 * scale, sizes=sizes),
        check_lp_oracle(seed, count=scale, sizes=(lp_lo, lp_hi),
                        certificate_sizes=() if quick else (16, 32, 64)),
    ]


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'property':<{width}}  result  checked  worst       tolerance"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = (f"{r.name:<{width}}  {status:<6}  {r.checked:>7}  "
                f"{r.worst:<10.3e}  {r.tolerance:.1e}")
        if r.detail:
            line += f"  ({r.detail})"
        lines.append(line)
    return "\n".join(lines)

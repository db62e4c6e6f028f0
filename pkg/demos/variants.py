"""Compare sampling rules and step directions on one benchmark instance."""

# %%
import numpy as np

from srot import objective, parse_label, random_problem, solve, vertex_plan

p = random_problem(32, 32, lam=1e-2, seed=1000)
eps = 1e-6 * objective(p, vertex_plan(p))

# %%
rows = []
for label in ("FW-ELS", "BCFW-U-ELS", "BCFW-P-ELS", "BCFW-GA-ELS",
              "BCAFW-ELS", "BCPFW-ELS", "BCPFW-GA-ELS"):
    sol = solve(p, parse_label(label, epsilon=eps, max_epochs=2000, rng_seed=0))
    rows.append((label, sol.converged, sol.epochs, sol.final_gap))

print(f"{'solver':14s} {'conv':>5s} {'epochs':>7s} {'gap':>10s}")
for label, conv, ep, gap in rows:
    print(f"{label:14s} {str(conv):>5s} {ep:7d} {gap:10.2e}")

# %% [markdown]
# Active-set state: the pairwise solution stores each column as a convex
# combination of a few vertices b_i e_j.

# %%
sol = solve(p, parse_label("BCPFW-ELS", epsilon=eps, max_epochs=2000))
sizes = np.array([len(sol.active_set[i]) for i in range(p.n)])
print("atoms per column: min", sizes.min(), "max", sizes.max(), "mean", sizes.mean())

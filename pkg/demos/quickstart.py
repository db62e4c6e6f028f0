"""Solve a random semi-relaxed problem and read off the gap certificate."""

# %%
import numpy as np

from srot import (duality_gap, lp_transport_solve, matrix_error, objective, parse_label,
                  random_problem, reference_optimum, solve)

p = random_problem(16, 16, lam=1e-2, seed=0)
print("shape", p.shape, "lambda", p.lam)

# %% [markdown]
# Pairwise steps converge fast enough to reach a tight gap.  The gap
# upper-bounds f(T) - f*, so a converged run certifies its own value.

# %%
sol = solve(p, parse_label("BCPFW-ELS", epsilon=1e-8, max_epochs=5000))
print(f"converged={sol.converged} epochs={sol.epochs} gap={sol.final_gap:.2e}")
print(f"f(T) = {objective(p, sol.plan):.10f}")

# %%
ref = reference_optimum(p, tol=1e-10)
print(f"f* <= {ref.f_star:.10f}  (certified: {ref.certified})")
assert objective(p, sol.plan) - ref.f_star <= sol.final_gap + ref.gap

# %% [markdown]
# Plain BCFW with uniform sampling is sublinear: the gap shrinks roughly
# like 1/k.

# %%
plain = solve(p, parse_label("BCFW-U-ELS", epsilon=1e-8, max_epochs=1000))
gaps = plain.trace.column("gap")
for e in (10, 100, 1000):
    print(f"epoch {e:5d}  gap {gaps[e]:.2e}")

# %% [markdown]
# A small lambda makes the penalty stiff and the plan approaches the exact
# transport plan.

# %%
q = random_problem(16, 16, lam=1e-4, seed=0)
lp = lp_transport_solve(q.C, q.a, q.b)
close = solve(q, parse_label("BCPFW-ELS", epsilon=1e-10, max_epochs=20000), lp_plan=lp)
print(f"relative distance to LP plan {matrix_error(close.plan.T, lp.T):.2e}")
print("gap now", f"{duality_gap(q, close.plan).total:.2e}")
print("nonzeros per column", np.count_nonzero(close.plan.T > 1e-12, axis=0).max())

"""Three-color transfer at two penalty scales."""

# %%
import numpy as np

from srot import lp_transport_solve, matrix_error, parse_label
from srot.colortransfer import color_transfer, synth_three_color, write_ppm

src, ref = synth_three_color(40, 40)

# %% [markdown]
# With lambda = 1e-6 the penalty on T 1 - a is stiff.  Mid-run, every source
# row spreads its mass in the reference proportions b, so the recolored image
# is a blend.

# %%
early = color_transfer(src, ref, 3, 1e-6,
                       parse_label("BCFW-P-DEC", epsilon=1e-300, max_epochs=140),
                       snapshot_epochs=[140])
T = early.solution.snapshots[140]
print("b =", np.round(early.problem.b, 3))
print("row-normalized plan at epoch 140:")
print(np.round(T / T.sum(axis=1, keepdims=True), 3))

# %%
converged = color_transfer(src, ref, 3, 1e-3,
                           parse_label("BCPFW-ELS", epsilon=1e-12, max_epochs=20000))
p = converged.problem
lp = lp_transport_solve(p.C, p.a, p.b)
print("distance to LP plan", f"{matrix_error(converged.solution.plan.T, lp.T):.2e}")
print("new palette:\n", np.round(converged.centroids * 255).astype(int))

# %%
# images go to the working directory
write_ppm(converged.image, "transfer_lam1e-3.ppm")
write_ppm(early.snapshots[140], "transfer_lam1e-6_epoch140.ppm")

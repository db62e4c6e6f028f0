"""Semi-relaxed optimal transport with block-coordinate Frank-Wolfe solvers.

The target marginal is kept as a hard constraint and the source marginal is
enforced by a quadratic penalty ``||T 1 - a||^2 / (2 lam)``.  Solvers report
the linearization duality gap, which bounds the distance to the optimum.
"""

from .baselines import (
    LPPlan,
    ReferenceOptimum,
    fista_solve,
    lp_transport_solve,
    pgd_solve,
    project_columns,
    project_scaled_simplex,
    reference_optimum,
)
from .core import (
    Atom,
    ConfigurationError,
    ConstraintError,
    GapReport,
    NumericError,
    SemiRelaxedProblem,
    SrotError,
    TransportPlan,
    column_gap,
    curvature_bounds,
    duality_gap,
    gradient_column,
    gradient_matrix,
    lagrangian_dual_value,
    lmo_column,
    objective,
    random_problem,
    update_column,
    vertex_plan,
)
from .metrics import (
    TRACE_COLUMNS,
    MetricRecord,
    SolverTrace,
    marginal_error,
    matrix_error,
    sparsity,
    value_error,
)
from .solvers import (
    ActiveSetState,
    GapState,
    Solution,
    SolverOptions,
    away_atom,
    bcfw_step,
    gap_sampler_draw,
    line_search_block,
    line_search_full,
    parse_label,
    solve,
    step_decay_bcfw,
    step_decay_fw,
)

__version__ = "0.1.0"

"""Solvers for history-dependent variational inequalities and sweeping processes.

The layering goes bottom-up: ``core`` has spaces, trajectories, cones and the
convex functionals; ``evi`` solves a single elliptic variational inequality;
``histop`` provides causal memory operators; ``inclusion`` couples both into
time-dependent normal-cone problems; ``sweeping`` rewrites velocity-constrained
processes into that form; ``contact`` assembles the 1-D viscoelastic contact
problems; ``oracle`` holds slow brute-force cross-checks; ``cli`` is the
config-driven entry point.
"""

from .core import (
    AssumptionWarning,
    ConstraintCone,
    DimensionMismatchError,
    HilbertSpace,
    HomogeneousFunctional,
    MovingSet,
    TimeGrid,
    TimeRangeError,
    Trajectory,
    UnsupportedConfigurationError,
    product_space,
)
from .evi import (
    AuditError,
    EviProblem,
    EviSolution,
    LipschitzOperator,
    MonotoneOperator,
    NonConvergenceError,
    OperatorAudit,
    audit_operator,
    solve_evi,
    vi_residual,
)
from .histop import (
    HistoryOperator,
    IneligibleOperatorError,
    VolterraKernel,
    apply_volterra,
    check_causality,
    check_declared_bound,
    estimate_constants,
    exp_growth_memory,
    exp_growth_memory_operator,
    identity_operator,
    picard_fixed_point,
    trapezoid_weights,
    volterra_operator,
    zero_operator,
)
from .inclusion import (
    InclusionSolution,
    InclusionSpec,
    SmallnessError,
    SmallnessReport,
    apply_coupling_map,
    build_inclusion_variant,
    check_smallness,
    solve_inclusion,
    solve_intermediate,
    stability_gap_violation,
)
from .sweeping import (
    SweepingSolution,
    SweepingSpec,
    antiderivative_memory,
    build_sweeping_variant,
    compose_with_antiderivative,
    integrate_velocity,
    lift_to_velocity,
    solve_sweeping,
    solve_sweeping_direct,
)
from .contact import (
    ContactLaw,
    ContactProblem,
    ContactReport,
    ContactSolution,
    Loads,
    Material,
    Mesh1D,
    StressRecord,
    assemble_space,
    build_problem,
    contact_diagnostics,
    recover_stress,
    solve_contact,
    trace_constant,
)
from .oracle import (
    GridSearchConfig,
    OracleInconclusiveError,
    brute_inclusion,
    brute_vi,
    fd_derivative_check,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionWarning",
    "AuditError",
    "ConstraintCone",
    "ContactLaw",
    "ContactProblem",
    "ContactReport",
    "ContactSolution",
    "DimensionMismatchError",
    "EviProblem",
    "EviSolution",
    "GridSearchConfig",
    "HilbertSpace",
    "HistoryOperator",
    "HomogeneousFunctional",
    "InclusionSolution",
    "InclusionSpec",
    "IneligibleOperatorError",
    "LipschitzOperator",
    "Loads",
    "Material",
    "Mesh1D",
    "MonotoneOperator",
    "MovingSet",
    "NonConvergenceError",
    "OperatorAudit",
    "OracleInconclusiveError",
    "SmallnessError",
    "SmallnessReport",
    "StressRecord",
    "SweepingSolution",
    "SweepingSpec",
    "TimeGrid",
    "TimeRangeError",
    "Trajectory",
    "UnsupportedConfigurationError",
    "VolterraKernel",
    "antiderivative_memory",
    "apply_coupling_map",
    "apply_volterra",
    "assemble_space",
    "audit_operator",
    "brute_inclusion",
    "brute_vi",
    "build_inclusion_variant",
    "build_problem",
    "build_sweeping_variant",
    "check_causality",
    "check_declared_bound",
    "check_smallness",
    "compose_with_antiderivative",
    "contact_diagnostics",
    "estimate_constants",
    "exp_growth_memory",
    "exp_growth_memory_operator",
    "fd_derivative_check",
    "identity_operator",
    "integrate_velocity",
    "lift_to_velocity",
    "picard_fixed_point",
    "product_space",
    "recover_stress",
    "solve_contact",
    "solve_evi",
    "solve_inclusion",
    "solve_intermediate",
    "solve_sweeping",
    "solve_sweeping_direct",
    "stability_gap_violation",
    "trace_constant",
    "trapezoid_weights",
    "vi_residual",
    "volterra_operator",
    "zero_operator",
]

"""Local maximum-entropy shape functions, interpolation and numerical diagnostics."""

__version__ = "0.1.0"

from .fields import REGISTRY as FIELDS, ScalarField, get_field
from .geometry import (
    Domain,
    PointSet,
    RegularityReport,
    generate_grid_points,
    h_density_bound,
    lattice_probes,
    neighbors_within,
    random_probes,
    ring_count,
    verify_h_covering,
)
from .interpolation import (
    ErrorReport,
    error_study,
    fit_rate,
    interpolate,
    interpolate_gradient,
    multipoint_identity_residual,
    taylor_remainder,
)
from .lme import (
    BatchEval,
    DegenerateJStarError,
    DualSolution,
    LmeError,
    LmeParams,
    NoNodesInRange,
    NotConvergedError,
    OutsideHullError,
    ShapeEval,
    evaluate,
    log_partition,
    primal_objective,
    shape_gradients,
    shape_values,
    solve_dual,
)

__all__ = [
    "BatchEval",
    "DegenerateJStarError",
    "Domain",
    "DualSolution",
    "ErrorReport",
    "FIELDS",
    "LmeError",
    "LmeParams",
    "NoNodesInRange",
    "NotConvergedError",
    "OutsideHullError",
    "PointSet",
    "RegularityReport",
    "ScalarField",
    "ShapeEval",
    "error_study",
    "evaluate",
    "fit_rate",
    "generate_grid_points",
    "get_field",
    "h_density_bound",
    "interpolate",
    "interpolate_gradient",
    "lattice_probes",
    "log_partition",
    "multipoint_identity_residual",
    "neighbors_within",
    "primal_objective",
    "random_probes",
    "ring_count",
    "shape_gradients",
    "shape_values",
    "solve_dual",
    "taylor_remainder",
    "verify_h_covering",
]

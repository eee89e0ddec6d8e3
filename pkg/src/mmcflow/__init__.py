"""mmcflow: minimizing movements for forced anisotropic multiphase curvature flow.

A grid-based simulator and verification library for the generalized
minimizing-movement time discretization of anisotropic mean curvature flow of
bounded partitions, with per-phase mobilities and bulk driving forces.
"""

from .field import Forcing, Grid, LabelField, ScalarField, SoftPartition
from .norms import (
    FamilyBounds,
    NormFamily,
    NormSpec,
    check_multiphase_condition,
    dual_eval,
    eval_norm,
    family_bounds,
    wulff_boundary,
)

__version__ = "0.1.0"

__all__ = [
    "Forcing",
    "Grid",
    "LabelField",
    "ScalarField",
    "SoftPartition",
    "FamilyBounds",
    "NormFamily",
    "NormSpec",
    "check_multiphase_condition",
    "dual_eval",
    "eval_norm",
    "family_bounds",
    "wulff_boundary",
    "__version__",
]

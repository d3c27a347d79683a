"""Shared singular subspace estimation across multiple noisy tables.

Two estimator families are provided. Stack-SVD concatenates the (weighted)
tables and takes leading right singular vectors. SVD-Stack takes each
table's leading right singular vectors and combines them with a second SVD.
The :mod:`stacksvd.theory` module predicts their limiting performance under
a spiked signal-plus-noise model, and :mod:`stacksvd.simulate` checks those
predictions by simulation.
"""

__version__ = "0.1.0"

from .errors import StackSVDError
from .model import (
    AlignmentReport,
    GroundTruth,
    ProblemSpec,
    SubspaceEstimate,
    TableSet,
    WeightVector,
    alignment,
    validate_spec,
)
from .theory import (
    beta_from_theta,
    detection_thresholds,
    eval_general_weighted_stacksvd,
    optimal_weights_stacksvd,
    optimal_weights_svdstack,
    predict_binary_stacksvd,
    predict_rank_r,
    predict_unweighted_stacksvd,
    predict_unweighted_svdstack,
    predict_weighted_stacksvd,
    predict_weighted_svdstack,
)
from .estimators import (
    auto_weights,
    estimate_theta_above_threshold,
    estimate_theta_cross_table,
    stack_svd,
    stack_svd_rank_r,
    svd_stack,
    svd_stack_rank_r,
)
from .simulate import ExperimentPlan, generate_tables, run_experiment

__all__ = [
    "StackSVDError",
    "AlignmentReport",
    "GroundTruth",
    "ProblemSpec",
    "SubspaceEstimate",
    "TableSet",
    "WeightVector",
    "alignment",
    "validate_spec",
    "beta_from_theta",
    "detection_thresholds",
    "eval_general_weighted_stacksvd",
    "optimal_weights_stacksvd",
    "optimal_weights_svdstack",
    "predict_binary_stacksvd",
    "predict_rank_r",
    "predict_unweighted_stacksvd",
    "predict_unweighted_svdstack",
    "predict_weighted_stacksvd",
    "predict_weighted_svdstack",
    "auto_weights",
    "estimate_theta_above_threshold",
    "estimate_theta_cross_table",
    "stack_svd",
    "stack_svd_rank_r",
    "svd_stack",
    "svd_stack_rank_r",
    "ExperimentPlan",
    "generate_tables",
    "run_experiment",
]

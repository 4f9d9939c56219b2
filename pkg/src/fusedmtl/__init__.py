"""Multi-task longitudinal regression with fused correlation-graph and
temporal-smoothness penalties, solved by a three-block ADMM."""

__version__ = "0.1.0"

from .core import (
    GraphMode,
    ObjectiveTerms,
    PenaltyConfig,
    TaskData,
    TaskDataset,
    TemporalDifferenceOperator,
    WeightMatrix,
    build_temporal_operator,
    objective_terms,
    objective_value,
    predict_tasks,
)
from .data import (
    LongitudinalTable,
    PreprocessParams,
    SyntheticSpec,
    apply_preprocessing,
    generate_synthetic,
    load_csv,
    preprocess,
)
from .metrics import EvaluationReport, evaluate_predictions, nmse, rmse, weighted_r
from .model_selection import CvResult, GridSpec, cross_validate, make_folds, split_train_test
from .similarity import (
    CorrelationStack,
    FusionGraph,
    build_fusion_graph,
    fuse,
    pearson_matrix,
    threshold,
    to_signed_laplacian,
)
from .solver import (
    ConvergenceTrace,
    SolverOptions,
    SolverResult,
    optimality_residual,
    prox_l1,
    solve,
)
from .stability import StabilityResult, stability_select

__all__ = [
    "GraphMode",
    "ObjectiveTerms",
    "PenaltyConfig",
    "TaskData",
    "TaskDataset",
    "TemporalDifferenceOperator",
    "WeightMatrix",
    "build_temporal_operator",
    "objective_terms",
    "objective_value",
    "predict_tasks",
    "LongitudinalTable",
    "PreprocessParams",
    "SyntheticSpec",
    "apply_preprocessing",
    "generate_synthetic",
    "load_csv",
    "preprocess",
    "EvaluationReport",
    "evaluate_predictions",
    "nmse",
    "rmse",
    "weighted_r",
    "CvResult",
    "GridSpec",
    "cross_validate",
    "make_folds",
    "split_train_test",
    "CorrelationStack",
    "FusionGraph",
    "build_fusion_graph",
    "fuse",
    "pearson_matrix",
    "threshold",
    "to_signed_laplacian",
    "ConvergenceTrace",
    "SolverOptions",
    "SolverResult",
    "optimality_residual",
    "prox_l1",
    "solve",
    "StabilityResult",
    "stability_select",
]

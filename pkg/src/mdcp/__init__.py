"""Multi-distribution conformal prediction toolkit.

Prediction sets with finite-sample worst-case coverage across several
heterogeneous data sources, plus a trainer that learns an
efficiency-optimal shared conformity score and an exact oracle for
verifying the optimality theory on small discrete problems.
"""

from .conformal import (
    CalibrationBank,
    PValueMode,
    classification_set,
    deterministic_p_matrix,
    empirical_randomized_quantile,
    max_p,
    p_value_deterministic,
    p_value_randomized,
    randomized_p_matrix,
)
from .data import (
    MultiSourceData,
    PooledRows,
    SourceDataset,
    SplitPlan,
    TaskKind,
    load_csv,
    pool,
    save_csv,
    split,
)
from .dgp import SUITES, SuiteConfig, sample_hyperparams, suite_dataset
from .dualopt import (
    BasisMap,
    DualTrainConfig,
    LambdaModel,
    SharedScore,
    empirical_dual_objective,
    load_lambda_model,
    objective_gradient,
    save_lambda_model,
    shared_score,
    train_lambda,
    tune_penalty,
    union_length_from_mask,
)
from .errors import (
    BadFractions,
    BadUniform,
    ClassOutOfRange,
    DegenerateLabels,
    EmptyLabels,
    EmptySource,
    EmptyVector,
    MdcpError,
    NegativeLambda,
    NonFinite,
    NumericalFailure,
    TooFewSamples,
    UnknownSource,
)
from .harness import (
    ExperimentConfig,
    aggregate_reports,
    run_experiment,
    verify_report,
)
from .models import (
    BoostedTreesConfig,
    CalibratedClassifier,
    ClassifierModel,
    GaussianWorkingModel,
    MixtureDensity,
    contiguous_folds,
    calibrate_classifier,
    fit_classifier,
    fit_gaussian,
    load_model,
    mixture_pool,
    save_model,
)
from .oracle import (
    DiscreteInstance,
    DualCertificate,
    GridPart,
    cond_dual_value,
    make_random_instance,
    marginal_dual_value,
    solve_cond_dual,
    solve_marginal_dual,
    solve_primal_lp,
    verify_certificate,
)
from .regsets import IntervalUnion, YGrid, build_grid, grid_mask_to_union, grid_search_set
from .rng import RNG_ALGORITHM, derive_seed, stream

__version__ = "0.1.0"

__all__ = [
    "BadFractions",
    "BadUniform",
    "BasisMap",
    "BoostedTreesConfig",
    "CalibratedClassifier",
    "CalibrationBank",
    "ClassOutOfRange",
    "ClassifierModel",
    "DegenerateLabels",
    "DiscreteInstance",
    "DualCertificate",
    "DualTrainConfig",
    "EmptyLabels",
    "EmptySource",
    "EmptyVector",
    "ExperimentConfig",
    "GaussianWorkingModel",
    "GridPart",
    "IntervalUnion",
    "LambdaModel",
    "MdcpError",
    "MixtureDensity",
    "MultiSourceData",
    "NegativeLambda",
    "NonFinite",
    "NumericalFailure",
    "PValueMode",
    "PooledRows",
    "RNG_ALGORITHM",
    "SUITES",
    "SharedScore",
    "SourceDataset",
    "SplitPlan",
    "SuiteConfig",
    "TaskKind",
    "TooFewSamples",
    "UnknownSource",
    "YGrid",
    "aggregate_reports",
    "build_grid",
    "calibrate_classifier",
    "classification_set",
    "cond_dual_value",
    "contiguous_folds",
    "derive_seed",
    "deterministic_p_matrix",
    "empirical_dual_objective",
    "empirical_randomized_quantile",
    "fit_classifier",
    "fit_gaussian",
    "grid_mask_to_union",
    "grid_search_set",
    "load_csv",
    "load_lambda_model",
    "load_model",
    "make_random_instance",
    "marginal_dual_value",
    "max_p",
    "mixture_pool",
    "objective_gradient",
    "p_value_deterministic",
    "p_value_randomized",
    "pool",
    "randomized_p_matrix",
    "run_experiment",
    "sample_hyperparams",
    "save_csv",
    "save_lambda_model",
    "save_model",
    "shared_score",
    "solve_cond_dual",
    "solve_marginal_dual",
    "solve_primal_lp",
    "split",
    "stream",
    "suite_dataset",
    "train_lambda",
    "tune_penalty",
    "union_length_from_mask",
    "verify_certificate",
    "verify_report",
]

"""High-dimensional instrumental-variables estimation with debiased intervals.

Pipeline: per-regressor first-stage lasso on the instruments, second-stage
lasso on the fitted means, row-wise l1 precision estimation of the fitted
Gram matrix, then a one-step correction with componentwise normal intervals.
"""

__version__ = "0.1.0"

from .clime import (
    ClimeRow,
    Infeasible,
    NumericalFailure,
    PrecisionEstimate,
    Unbounded,
    build_precision,
    min_inf_residual,
    solve_clime_row,
)
from .inference import (
    InferenceResult,
    InvalidAlpha,
    NonpositiveDiagonal,
    RemainderDiagnostics,
    SingularPopulationGram,
    build_inference,
    confidence_interval,
    one_step_update,
    remainder_decomposition,
    se_homoscedastic,
    se_robust,
    sigma_u_hat,
)
from .lasso import (
    CvReport,
    LambdaGrid,
    LassoFit,
    cv_lasso,
    fit_lasso,
    kkt_check,
    kkt_residual,
    lambda_grid,
    lambda_max,
    objective_value,
    soft_threshold,
)
from .matcore import (
    BandOverlap,
    DimensionMismatch,
    InvalidRho,
    NotPositiveDefinite,
    RngState,
    SpdMatrix,
    cholesky,
    circulant_sigma,
    mvnormal_sample,
    toeplitz_sigma,
)
from .simstudy import (
    IvModel,
    StudyConfig,
    StudyError,
    StudyMetrics,
    SupportTooLarge,
    TrialRecord,
    build_model,
    build_sigma_uv,
    gen_supports,
    run_study,
    run_trial,
)
from .twostage import (
    Dataset,
    FirstStageFit,
    GramMatrix,
    TwoStageFit,
    fit_first_stage,
    fit_second_stage,
    fit_two_stage,
    gram,
)

__all__ = [
    "BandOverlap",
    "ClimeRow",
    "CvReport",
    "Dataset",
    "DimensionMismatch",
    "FirstStageFit",
    "GramMatrix",
    "InferenceResult",
    "Infeasible",
    "InvalidAlpha",
    "InvalidRho",
    "IvModel",
    "LambdaGrid",
    "LassoFit",
    "NonpositiveDiagonal",
    "NotPositiveDefinite",
    "NumericalFailure",
    "PrecisionEstimate",
    "RemainderDiagnostics",
    "RngState",
    "SingularPopulationGram",
    "SpdMatrix",
    "StudyConfig",
    "StudyError",
    "StudyMetrics",
    "SupportTooLarge",
    "TrialRecord",
    "TwoStageFit",
    "Unbounded",
    "__version__",
    "build_inference",
    "build_model",
    "build_precision",
    "build_sigma_uv",
    "cholesky",
    "circulant_sigma",
    "confidence_interval",
    "cv_lasso",
    "fit_first_stage",
    "fit_lasso",
    "fit_second_stage",
    "fit_two_stage",
    "gen_supports",
    "gram",
    "kkt_check",
    "kkt_residual",
    "lambda_grid",
    "lambda_max",
    "mvnormal_sample",
    "objective_value",
    "one_step_update",
    "remainder_decomposition",
    "run_study",
    "run_trial",
    "se_homoscedastic",
    "se_robust",
    "sigma_u_hat",
    "soft_threshold",
    "solve_clime_row",
    "toeplitz_sigma",
]

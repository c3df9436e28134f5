"""certsmooth: multi-scale randomized smoothing certification engine.

Statistically sound adversarially-certified predictions for any base
classifier at one or several Gaussian noise scales, with cascaded,
max-radius and focal aggregation policies, calibration losses, and an
evaluation harness.
"""

from ._backend import backend_name
from .calibration import (
    anti_consistency_loss,
    brier_loss,
    clean_prior_ensemble,
    error_decomposition,
    total_objective,
)
from .cascade import (
    CascadeConfig,
    CascadeTrace,
    cascade_certify_exact,
    cascade_predict_certify,
)
from .classifiers import (
    ExternalDumpClassifier,
    GridClassifier,
    LinearClassifier,
    NoiseBatchSpec,
    classify,
    emit_noise_batch,
    exact_smoothed_confidence,
    ingest_predictions,
    load_classifier,
)
from .harness import RunConfig, acr, certified_accuracy, critical_sigma_scan, run_batch
from .multipolicy import (
    FocalInstance,
    FocalSolution,
    focal_certify,
    focal_optimize,
    focal_radius,
    max_radius_policy,
)
from .smoothing import (
    ABSTAIN,
    CertificationResult,
    VoteHistogram,
    certify,
    predict,
    sample_votes,
)
from .stats import (
    bonferroni_adjust,
    clopper_pearson_lower,
    goodman_upper,
    std_normal_cdf,
    std_normal_quantile,
)

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN",
    "CascadeConfig",
    "CascadeTrace",
    "CertificationResult",
    "ExternalDumpClassifier",
    "FocalInstance",
    "FocalSolution",
    "GridClassifier",
    "LinearClassifier",
    "NoiseBatchSpec",
    "RunConfig",
    "VoteHistogram",
    "acr",
    "anti_consistency_loss",
    "backend_name",
    "bonferroni_adjust",
    "brier_loss",
    "cascade_certify_exact",
    "cascade_predict_certify",
    "certified_accuracy",
    "certify",
    "classify",
    "clean_prior_ensemble",
    "clopper_pearson_lower",
    "critical_sigma_scan",
    "emit_noise_batch",
    "error_decomposition",
    "exact_smoothed_confidence",
    "focal_certify",
    "focal_optimize",
    "focal_radius",
    "goodman_upper",
    "ingest_predictions",
    "load_classifier",
    "max_radius_policy",
    "predict",
    "run_batch",
    "sample_votes",
    "std_normal_cdf",
    "std_normal_quantile",
    "total_objective",
]

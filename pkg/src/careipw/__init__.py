"""Unadjusted, IPW, CARE and CARE-IPW estimators of the average treatment effect."""
from .estimators import (ATEEstimator, ClusterDataset, EstimateResult, Estimator,
                         EstimatorConfig, estimate, estimate_care, estimate_care_ipw,
                         estimate_ipw, estimate_unadjusted, wald_inference)
from .glm import Family, FittedGlm, GlmSpec, GLMRegressor, fit_glm, predict_response

__version__ = "0.1.0"

__all__ = [
    "ATEEstimator", "ClusterDataset", "EstimateResult", "Estimator", "EstimatorConfig",
    "Family", "FittedGlm", "GLMRegressor", "GlmSpec", "estimate", "estimate_care",
    "estimate_care_ipw", "estimate_ipw", "estimate_unadjusted", "fit_glm",
    "predict_response", "wald_inference",
]

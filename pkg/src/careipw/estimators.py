"""Average treatment effect estimators with influence-curve inference.

Four estimators share one weighted-residual form::

    psi_hat = mean( (A / g(W) - (1 - A) / (1 - g(W))) * (Y - m(W)) )

where ``g`` is either the empirical exposure share or a fitted propensity
score, and ``m`` is either a constant or an outcome-model prediction that
excludes the exposure.  ``psi_hat`` solves the estimating equation whose
per-unit contributions are the summands minus ``psi_hat``; their sample
variance over ``n`` gives the standard error.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_exposure, check_matrix, check_vector
from .exceptions import ExposureInOutcomeModel, MissingColumn, PositivityViolation
from .glm import PROBABILITY_FLOOR, Family, GlmSpec, fit_glm, predict_response

Z_975 = 1.959964


class Estimator(str, enum.Enum):
    UNADJUSTED = "Unadj"
    IPW = "IPW"
    CARE = "CARE"
    CARE_IPW = "CARE-IPW"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        table = {"unadj": cls.UNADJUSTED, "unadjusted": cls.UNADJUSTED, "ipw": cls.IPW,
                 "care": cls.CARE, "careipw": cls.CARE_IPW}
        try:
            return table[key]
        except KeyError:
            raise ValueError(f"unknown estimator {value!r}") from None


@dataclass(frozen=True)
class ClusterDataset:
    """Rectangular analysis data: named covariates, binary exposure, outcome.

    ``predictions`` optionally carries externally computed outcome predictions
    (for example cluster-level rates aggregated from an individual-level
    model) that CARE and CARE-IPW can use instead of fitting a model.
    """

    covariates: np.ndarray
    columns: tuple
    exposure: np.ndarray
    outcome: np.ndarray
    predictions: Optional[np.ndarray] = None
    exposure_name: str = "A"
    outcome_name: str = "Y"

    def __post_init__(self):
        X = check_matrix(self.covariates) if np.size(self.covariates) else np.empty((len(self.exposure), 0))
        a = check_exposure(self.exposure, require_both_arms=False)
        y = check_vector(self.outcome, "outcome", length=a.shape[0])
        if X.shape[0] != a.shape[0]:
            raise ValueError("covariates and exposure differ in length")
        cols = tuple(self.columns)
        if len(cols) != X.shape[1]:
            raise ValueError(f"{len(cols)} column names for {X.shape[1]} covariates")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "exposure", a)
        object.__setattr__(self, "outcome", y)
        if self.predictions is not None:
            object.__setattr__(self, "predictions",
                               check_vector(self.predictions, "predictions", length=a.shape[0]))

    @classmethod
    def from_frame(cls, frame, covariates, exposure, outcome, predictions=None):
        """Build from a DataFrame or a mapping of column name to values."""
        missing = [c for c in [*covariates, exposure, outcome, predictions]
                   if c is not None and c not in frame]
        if missing:
            raise MissingColumn(f"missing column {missing[0]!r}")
        X = np.column_stack([np.asarray(frame[c], dtype=float) for c in covariates]) \
            if covariates else np.empty((len(frame[exposure]), 0))
        return cls(X, tuple(covariates), np.asarray(frame[exposure], dtype=float),
                   np.asarray(frame[outcome], dtype=float),
                   None if predictions is None else np.asarray(frame[predictions], dtype=float),
                   exposure_name=exposure, outcome_name=outcome)

    @property
    def n(self):
        return self.exposure.shape[0]

    def column(self, name):
        if name in self.columns:
            return self.covariates[:, self.columns.index(name)]
        if name == self.exposure_name:
            return self.exposure
        if name == self.outcome_name:
            return self.outcome
        raise MissingColumn(f"missing column {name!r}")

    def replace(self, **changes):
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class EstimatorConfig:
    """Nuisance specifications for the adjusted estimators.

    Either a model spec or precomputed values can be given for each nuisance
    function; precomputed values take precedence.  Weights are always
    Horvitz-Thompson (unnormalized).
    """

    outcome_spec: Optional[GlmSpec] = None
    propensity_spec: Optional[GlmSpec] = None
    predictions: Optional[np.ndarray] = None
    propensities: Optional[np.ndarray] = None


@dataclass(frozen=True)
class EstimateResult:
    estimator: Estimator
    psi_hat: float
    se: float
    ci_lower: float
    ci_upper: float
    p_value: float
    ic_contributions: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.ic_contributions.shape[0]

    def to_dict(self, include_ic=False):
        out = {
            "estimator": self.estimator.value,
            "psi_hat": self.psi_hat,
            "se": self.se,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "p_value": self.p_value,
            "n": self.n,
            "diagnostics": self.diagnostics,
        }
        if include_ic:
            out["ic_contributions"] = self.ic_contributions.tolist()
        return out


def wald_inference(ic_contributions, psi_hat, n):
    """Standard error, 95% Wald interval and two-sided p-value.

    The variance is the ``n - 1`` sample variance of the estimating-function
    values divided by `n`.  With zero variance the interval collapses to the
    point and the p-value is 1 when ``psi_hat == 0`` and 0 otherwise.
    """
    ic = np.asarray(ic_contributions, dtype=float)
    if n < 2:
        raise ValueError("need at least two units for a variance estimate")
    values = ic + psi_hat
    var = float(np.var(values, ddof=1))
    scale = 1.0 + float(np.max(np.abs(values)))
    se = math.sqrt(var / n) if var > (1e-15 * scale) ** 2 else 0.0
    if se == 0.0:
        return 0.0, (psi_hat, psi_hat), 1.0 if psi_hat == 0 else 0.0
    p = float(2.0 * norm.sf(abs(psi_hat / se)))
    return se, (psi_hat - Z_975 * se, psi_hat + Z_975 * se), p


def contrast_weights(a, g):
    """Per-unit ``A/g - (1-A)/(1-g)`` weights."""
    return a / g - (1.0 - a) / (1.0 - g)


def _solve(estimator, weights, residual, diagnostics):
    summand = weights * residual
    psi = float(np.mean(summand))
    ic = summand - psi
    se, (lo, hi), p = wald_inference(ic, psi, ic.shape[0])
    ic.setflags(write=False)
    return EstimateResult(Estimator.parse(estimator), psi, se, lo, hi, p, ic, diagnostics)


def _propensities(data: ClusterDataset, config: EstimatorConfig, diagnostics):
    check_exposure(data.exposure)
    if config.propensities is not None:
        raw = check_vector(config.propensities, "propensities", length=data.n)
    elif config.propensity_spec is not None:
        spec = config.propensity_spec
        if spec.family is not Family.BINOMIAL_LOGIT:
            raise ValueError("propensity model must be logistic")
        model = fit_glm(data, spec, data.exposure_name)
        diagnostics["propensity_converged"] = model.converged
        raw = predict_response(model, data, clamp=False)
    else:
        raise ValueError("a propensity_spec or precomputed propensities are required")
    g = np.clip(raw, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
    n_clamped = int(np.sum(g != raw))
    diagnostics.update(propensity_min=float(g.min()), propensity_max=float(g.max()),
                       n_clamped=n_clamped)
    if n_clamped:
        warnings.warn(f"{n_clamped} propensities clamped to [{PROBABILITY_FLOOR}, "
                      f"{1 - PROBABILITY_FLOOR}]", PositivityViolation, stacklevel=3)
    return g


def _predictions(data: ClusterDataset, config: EstimatorConfig, diagnostics):
    if config.predictions is not None:
        return check_vector(config.predictions, "predictions", length=data.n)
    spec = config.outcome_spec
    if spec is None:
        if data.predictions is not None:
            return data.predictions
        raise ValueError("an outcome_spec or precomputed predictions are required")
    if data.exposure_name in spec.formula:
        raise ExposureInOutcomeModel(
            f"outcome model must exclude the exposure column {data.exposure_name!r}")
    model = fit_glm(data, spec, data.outcome_name)
    diagnostics["outcome_converged"] = model.converged
    return predict_response(model, data)


def estimate_unadjusted(data: ClusterDataset) -> EstimateResult:
    """Difference in arm means.

    The estimating-function values use outcomes centred at the overall mean,
    i.e. the residual form with a constant prediction ``mean(Y)``.  Centring
    leaves ``psi_hat`` unchanged because the contrast weights sum to zero, and
    it makes the variance that of the difference in means rather than of the
    raw weighted outcomes.
    """
    a, y = check_exposure(data.exposure), data.outcome
    p1 = float(np.mean(a))
    g = np.full(data.n, p1)
    return _solve(Estimator.UNADJUSTED, contrast_weights(a, g), y - np.mean(y),
                  {"p_exposed": p1})


def estimate_ipw(data: ClusterDataset, config: EstimatorConfig) -> EstimateResult:
    diagnostics = {}
    g = _propensities(data, config, diagnostics)
    return _solve(Estimator.IPW, contrast_weights(data.exposure, g), data.outcome, diagnostics)


def estimate_care(data: ClusterDataset, config: EstimatorConfig) -> EstimateResult:
    diagnostics = {}
    a = check_exposure(data.exposure)
    m = _predictions(data, config, diagnostics)
    p1 = float(np.mean(a))
    diagnostics["p_exposed"] = p1
    return _solve(Estimator.CARE, contrast_weights(a, np.full(data.n, p1)),
                  data.outcome - m, diagnostics)


def estimate_care_ipw(data: ClusterDataset, config: EstimatorConfig) -> EstimateResult:
    diagnostics = {}
    m = _predictions(data, config, diagnostics)
    g = _propensities(data, config, diagnostics)
    return _solve(Estimator.CARE_IPW, contrast_weights(data.exposure, g),
                  data.outcome - m, diagnostics)


def estimate(estimator, data: ClusterDataset, config: Optional[EstimatorConfig] = None):
    """Dispatch to the estimator named by `estimator`."""
    estimator = Estimator.parse(estimator)
    if estimator is Estimator.UNADJUSTED:
        return estimate_unadjusted(data)
    config = config or EstimatorConfig()
    return {Estimator.IPW: estimate_ipw, Estimator.CARE: estimate_care,
            Estimator.CARE_IPW: estimate_care_ipw}[estimator](data, config)


class ATEEstimator(BaseEstimator):
    """scikit-learn style front end for the four estimators.

    Parameters
    ----------
    method : {"unadjusted", "ipw", "care", "care_ipw"}
    outcome_family : {"binomial", "poisson"}
        Family of the exposure-free outcome model (CARE, CARE-IPW).
    outcome_features, propensity_features : list of str or int, optional
        Columns used as main terms; all columns when None.

    Attributes
    ----------
    result_ : EstimateResult
    effect_, stderr_, pvalue_ : float
    conf_int_ : tuple of float
    influence_ : ndarray
        Per-unit estimating-function values at ``effect_``.
    """

    def __init__(self, method="care_ipw", outcome_family="binomial",
                 outcome_features=None, propensity_features=None):
        self.method = method
        self.outcome_family = outcome_family
        self.outcome_features = outcome_features
        self.propensity_features = propensity_features

    def _dataset(self, X, treatment, y):
        names = getattr(X, "columns", None)
        X = check_matrix(X)
        names = tuple(str(c) for c in names) if names is not None else \
            tuple(f"x{j}" for j in range(X.shape[1]))
        return ClusterDataset(X, names, treatment, y, exposure_name="__A__", outcome_name="__Y__")

    @staticmethod
    def _terms(features, names):
        if features is None:
            return names
        return tuple(names[f] if isinstance(f, (int, np.integer)) else str(f) for f in features)

    def fit(self, X, treatment, y, predictions=None, propensities=None):
        data = self._dataset(X, treatment, y)
        config = EstimatorConfig(
            outcome_spec=GlmSpec(self.outcome_family, self._terms(self.outcome_features, data.columns)),
            propensity_spec=GlmSpec(Family.BINOMIAL_LOGIT,
                                    self._terms(self.propensity_features, data.columns)),
            predictions=predictions,
            propensities=propensities,
        )
        self.result_ = estimate(self.method, data, config)
        self.effect_ = self.result_.psi_hat
        self.stderr_ = self.result_.se
        self.conf_int_ = (self.result_.ci_lower, self.result_.ci_upper)
        self.pvalue_ = self.result_.p_value
        self.influence_ = self.result_.ic_contributions
        return self

    def summary(self):
        check_is_fitted(self, "result_")
        return self.result_.to_dict()

"""Logistic and Poisson regression fitted by iteratively reweighted least squares.

Both families use their canonical link, so Fisher scoring and Newton-Raphson
coincide and each IRLS step is a weighted least-squares solve.  The module
exposes a functional interface (:func:`fit_glm`, :func:`predict_response`)
that works on named-column tables, and a scikit-learn compatible
:class:`GLMRegressor` for array input.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.special import expit, logit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_vector, get_column, n_rows
from .exceptions import InvalidResponse, NonConvergence, SingularDesign

SCORE_TOLERANCE = 1e-8
MAX_ITERATIONS = 100
PROBABILITY_FLOOR = 1e-6
# a Newton step larger than this means the estimate is still moving
_STEP_TOLERANCE = 1e-6
_RANK_RTOL = 1e-10


class Family(str, enum.Enum):
    BINOMIAL_LOGIT = "binomial"
    POISSON_LOG = "poisson"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"binomial": cls.BINOMIAL_LOGIT, "logistic": cls.BINOMIAL_LOGIT,
                   "binomiallogit": cls.BINOMIAL_LOGIT, "poisson": cls.POISSON_LOG,
                   "poissonlog": cls.POISSON_LOG}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown GLM family {value!r}") from None


@dataclass(frozen=True)
class GlmSpec:
    """Model specification: family, main-term columns and an optional offset.

    ``offset`` names a column holding the log exposure (for example the log of
    follow-up years); only the Poisson family accepts one.
    """

    family: Family
    formula: tuple = ()
    include_intercept: bool = True
    offset: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "formula", tuple(self.formula))
        if self.offset is not None and self.family is not Family.POISSON_LOG:
            raise ValueError("an offset is only allowed for the Poisson family")
        if not self.formula and not self.include_intercept:
            raise ValueError("model has no terms")

    @property
    def term_names(self):
        return (("(Intercept)",) if self.include_intercept else ()) + self.formula

    def design_matrix(self, data):
        cols = [get_column(data, name) for name in self.formula]
        n = n_rows(data) if not cols else len(cols[0])
        if self.include_intercept:
            cols.insert(0, np.ones(n))
        return np.column_stack(cols).astype(float) if cols else np.empty((n, 0))

    def offset_vector(self, data):
        if self.offset is None:
            return None
        return np.asarray(get_column(data, self.offset), dtype=float)


@dataclass(frozen=True)
class FittedGlm:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    max_abs_score: float
    family: GlmSpec
    # raw (unclamped) fitted means on the training rows
    fitted_values: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def spec(self):
        return self.family

    def as_dict(self):
        return dict(zip(self.family.term_names, map(float, self.coefficients)))


def _mean_function(family, eta):
    if family is Family.BINOMIAL_LOGIT:
        return expit(eta)
    return np.exp(np.minimum(eta, 700.0))


def _check_response(family, y):
    if not np.all(np.isfinite(y)):
        raise InvalidResponse("response contains non-finite values")
    if family is Family.BINOMIAL_LOGIT and not np.all((y == 0) | (y == 1)):
        raise InvalidResponse("logistic response must be coded 0/1")
    if family is Family.POISSON_LOG and np.any(y < 0):
        raise InvalidResponse("Poisson response must be nonnegative")


def _check_rank(X):
    if X.shape[1] == 0:
        return
    _, r, _ = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[-1] <= _RANK_RTOL * diag[0]:
        rank = int(np.sum(diag > _RANK_RTOL * diag[0]))
        raise SingularDesign(f"design matrix has rank {rank} < {X.shape[1]} columns")


def irls(X, y, family, offset=None, *, tol=SCORE_TOLERANCE, max_iter=MAX_ITERATIONS):
    """Maximum-likelihood coefficients for a canonical-link GLM.

    Returns ``(beta, converged, iterations, max_abs_score)``.  Convergence
    requires both the score sup-norm to be within `tol` and the last Newton
    step to be small, so a diverging estimate (separation, an all-zero Poisson
    response) is never reported as converged even though its score decays.
    """
    family = Family.parse(family)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    _check_response(family, y)
    if n < p + 1:
        raise SingularDesign(f"{n} rows cannot identify {p} coefficients")
    _check_rank(X)

    # standard starting means, then a weighted least-squares solve
    if family is Family.BINOMIAL_LOGIT:
        mu = (y + 0.5) / 2.0
        eta = logit(mu)
    else:
        mu = y + 0.1
        eta = np.log(mu)
    w = mu * (1.0 - mu) if family is Family.BINOMIAL_LOGIT else mu
    z = eta - off + (y - mu) / w
    sw = np.sqrt(w)
    beta = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]

    converged = False
    iterations = 0
    score = np.inf
    for iterations in range(1, max_iter + 1):
        mu = _mean_function(family, X @ beta + off)
        w = mu * (1.0 - mu) if family is Family.BINOMIAL_LOGIT else mu
        grad = X.T @ (y - mu)
        info = X.T @ (X * w[:, None])
        try:
            cho = scipy.linalg.cho_factor(info)
            step = scipy.linalg.cho_solve(cho, grad)
        except (np.linalg.LinAlgError, ValueError):
            # weights underflowed along a diverging direction
            break
        if not np.all(np.isfinite(step)):
            break
        beta = beta + step
        mu = _mean_function(family, X @ beta + off)
        score = float(np.max(np.abs(X.T @ (y - mu)))) if p else 0.0
        if score <= tol and np.max(np.abs(step), initial=0.0) <= _STEP_TOLERANCE * (1.0 + np.max(np.abs(beta), initial=0.0)):
            converged = True
            break
    else:
        mu = _mean_function(family, X @ beta + off)
        score = float(np.max(np.abs(X.T @ (y - mu)))) if p else 0.0
    if not np.isfinite(score):
        score = float(np.max(np.abs(X.T @ (y - _mean_function(family, X @ beta + off)))))
    return beta, converged, iterations, score


def fit_glm(data, spec: GlmSpec, response, *, tol=SCORE_TOLERANCE, max_iter=MAX_ITERATIONS):
    """Fit `spec` to `data` with column `response` as the outcome.

    `data` may be a mapping of column name to values, a pandas DataFrame, a
    :class:`~careipw.estimators.ClusterDataset` or a list of record objects.
    A non-converged fit emits :class:`NonConvergence` and is still returned.
    """
    X = spec.design_matrix(data)
    y = np.asarray(get_column(data, response), dtype=float)
    offset = spec.offset_vector(data)
    beta, converged, iterations, score = irls(X, y, spec.family, offset, tol=tol, max_iter=max_iter)
    fitted = _mean_function(spec.family, X @ beta + (0.0 if offset is None else offset))
    if not converged:
        warnings.warn(
            f"IRLS did not converge after {iterations} iterations "
            f"(max |score| = {score:.3g}); fitted means span "
            f"[{fitted.min():.3g}, {fitted.max():.3g}]",
            NonConvergence,
            stacklevel=2,
        )
    beta.setflags(write=False)
    fitted.setflags(write=False)
    return FittedGlm(beta, converged, iterations, score, spec, fitted)


def linear_predictor(model: FittedGlm, data, offset=None):
    spec = model.family
    eta = spec.design_matrix(data) @ model.coefficients
    if offset is None:
        offset = spec.offset_vector(data)
    if offset is not None:
        eta = eta + offset
    return eta


def predict_response(model: FittedGlm, data, *, offset=None, clamp=True):
    """Fitted means for `data` on the response scale.

    Logistic predictions are clamped to
    ``[PROBABILITY_FLOOR, 1 - PROBABILITY_FLOOR]`` unless ``clamp=False``.
    """
    mu = _mean_function(model.family.family, linear_predictor(model, data, offset))
    if clamp and model.family.family is Family.BINOMIAL_LOGIT:
        mu = np.clip(mu, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
    return mu


def log_likelihood(beta, X, y, family, offset=None):
    """Log-likelihood up to terms free of `beta`."""
    eta = X @ beta + (0.0 if offset is None else offset)
    if Family.parse(family) is Family.BINOMIAL_LOGIT:
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return float(np.sum(y * eta - np.exp(eta)))


def score_vector(beta, X, y, family, offset=None):
    eta = X @ beta + (0.0 if offset is None else offset)
    return X.T @ (y - _mean_function(Family.parse(family), eta))


class GLMRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn style wrapper around :func:`irls`.

    Parameters
    ----------
    family : {"binomial", "poisson"}
        Logistic (logit link) or Poisson (log link) regression.
    fit_intercept : bool
    tol, max_iter : float, int
        Score sup-norm tolerance and iteration cap.

    Attributes
    ----------
    coef_, intercept_ : ndarray, float
    converged_ : bool
    n_iter_ : int
    max_abs_score_ : float
    """

    def __init__(self, family="binomial", fit_intercept=True, tol=SCORE_TOLERANCE,
                 max_iter=MAX_ITERATIONS):
        self.family = family
        self.fit_intercept = fit_intercept
        self.tol = tol
        self.max_iter = max_iter

    def _design(self, X):
        X = check_matrix(X)
        if self.fit_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        return X

    def fit(self, X, y, offset=None):
        family = Family.parse(self.family)
        D = self._design(X)
        y = check_vector(y, "y", length=D.shape[0])
        if offset is not None:
            offset = check_vector(offset, "offset", length=D.shape[0])
            if family is not Family.POISSON_LOG:
                raise ValueError("an offset is only allowed for the Poisson family")
        beta, self.converged_, self.n_iter_, self.max_abs_score_ = irls(
            D, y, family, offset, tol=self.tol, max_iter=self.max_iter)
        if not self.converged_:
            warnings.warn("IRLS did not converge", NonConvergence, stacklevel=2)
        self.intercept_ = float(beta[0]) if self.fit_intercept else 0.0
        self.coef_ = beta[1:] if self.fit_intercept else beta
        self.n_features_in_ = self.coef_.shape[0]
        return self

    def predict(self, X, offset=None):
        check_is_fitted(self, "coef_")
        X = check_matrix(X)
        eta = self.intercept_ + X @ self.coef_
        if offset is not None:
            eta = eta + np.asarray(offset, dtype=float)
        mu = _mean_function(Family.parse(self.family), eta)
        if Family.parse(self.family) is Family.BINOMIAL_LOGIT:
            mu = np.clip(mu, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
        return mu

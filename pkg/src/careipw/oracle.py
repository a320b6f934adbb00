"""Exact expectations over finite-support laws of (W, A, Y) with binary Y.

A :class:`DiscreteDgp` stores ``P(W = w_k)``, ``P(A = 1 | W = w_k)`` and
``P(Y = 1 | A = a, W = w_k)``.  Every quantity here is a finite sum over the
support, so the unbiasedness identities for the CARE and CARE-IPW estimating
functions can be checked to floating-point precision.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .estimators import ClusterDataset
from .exceptions import DegenerateArm, InvalidDgp, PositivityFailure

MAX_SUPPORT = 64
SUM_TOLERANCE = 1e-12
IDENTITY_TOLERANCE = 1e-12

Predictor = Union[None, Callable, Mapping, Sequence, np.ndarray]


@dataclass(frozen=True)
class DiscreteDgp:
    w_support: np.ndarray  # (k, d)
    w_prob: np.ndarray  # (k,)
    propensity: np.ndarray  # (k,) P(A=1 | w)
    outcome: np.ndarray  # (k, 2) P(Y=1 | A=a, w), column a

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.w_support, dtype=float))
        if support.shape[0] == 1 and np.ndim(self.w_support) == 1:
            support = support.T
        prob = np.asarray(self.w_prob, dtype=float)
        g = np.asarray(self.propensity, dtype=float)
        q = np.asarray(self.outcome, dtype=float)
        k = support.shape[0]
        if not 1 <= k <= MAX_SUPPORT:
            raise InvalidDgp(f"support size {k} outside [1, {MAX_SUPPORT}]")
        if prob.shape != (k,) or g.shape != (k,) or q.shape != (k, 2):
            raise InvalidDgp("probability tables do not match the support size")
        if np.any(prob < 0) or abs(prob.sum() - 1.0) > SUM_TOLERANCE:
            raise InvalidDgp(f"covariate probabilities sum to {prob.sum()!r}")
        if np.any((q < 0) | (q > 1)):
            raise InvalidDgp("outcome probabilities must lie in [0, 1]")
        if np.any((g <= 0) | (g >= 1)):
            raise PositivityFailure("propensities must lie strictly inside (0, 1)")
        for name, value in zip(("w_support", "w_prob", "propensity", "outcome"),
                               (support, prob, g, q)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def size(self):
        return self.w_prob.shape[0]

    @property
    def p_exposed(self):
        return float(np.sum(self.w_prob * self.propensity))

    def is_randomized(self, atol=0.0):
        return bool(np.all(np.abs(self.propensity - self.propensity[0]) <= atol))

    def implied_predictor(self):
        """E(Y | W) = sum_a P(Y=1 | a, W) P(A=a | W)."""
        g = self.propensity
        return g * self.outcome[:, 1] + (1.0 - g) * self.outcome[:, 0]

    def to_dict(self):
        return {
            "w_support": self.w_support.tolist(),
            "w_prob": self.w_prob.tolist(),
            "propensity": self.propensity.tolist(),
            "outcome": self.outcome.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        try:
            return cls(payload["w_support"], payload["w_prob"], payload["propensity"],
                       payload["outcome"])
        except KeyError as exc:
            raise InvalidDgp(f"fixture lacks field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, (InvalidDgp, PositivityFailure)):
                raise
            raise InvalidDgp(str(exc)) from None


def save_dgp(dgp: DiscreteDgp, path):
    Path(path).write_text(json.dumps(dgp.to_dict(), indent=2) + "\n")


def load_dgp(path) -> DiscreteDgp:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidDgp(f"{path}: {exc}") from None
    if not isinstance(payload, dict):
        raise InvalidDgp(f"{path}: expected a JSON object")
    return DiscreteDgp.from_dict(payload)


def _predictor_values(dgp: DiscreteDgp, predictor: Predictor):
    if predictor is None:
        return dgp.implied_predictor()
    if callable(predictor):
        return np.array([float(predictor(tuple(w))) for w in dgp.w_support])
    if isinstance(predictor, Mapping):
        return np.array([float(predictor[tuple(w)]) for w in dgp.w_support])
    values = np.asarray(predictor, dtype=float)
    if values.shape != (dgp.size,):
        raise ValueError(f"predictor has shape {values.shape}, expected ({dgp.size},)")
    return values


def exact_psi_rct(dgp: DiscreteDgp) -> float:
    """E(Y | A=1) - E(Y | A=0) under the joint law."""
    p1 = dgp.p_exposed
    p0 = 1.0 - p1
    if p1 <= 0.0 or p0 <= 0.0:
        raise DegenerateArm("one exposure arm has zero probability")
    joint1 = dgp.w_prob * dgp.propensity
    joint0 = dgp.w_prob * (1.0 - dgp.propensity)
    return float(np.sum(joint1 * dgp.outcome[:, 1]) / p1 - np.sum(joint0 * dgp.outcome[:, 0]) / p0)


def exact_psi_obs(dgp: DiscreteDgp) -> float:
    """G-computation contrast sum_w P(w) [E(Y | 1, w) - E(Y | 0, w)]."""
    if np.any((dgp.propensity <= 0) | (dgp.propensity >= 1)):
        raise PositivityFailure("propensity of 0 or 1 on the support")
    return float(np.sum(dgp.w_prob * (dgp.outcome[:, 1] - dgp.outcome[:, 0])))


def exact_expectation_D(dgp: DiscreteDgp, psi: float, predictor: Predictor = None) -> float:
    """E[D(O; psi)] for the CARE estimating function.

    D weights residuals ``Y - m(W)`` by ``A / P(A=1) - (1 - A) / P(A=0)`` with the
    true marginal exposure probability.  `predictor` gives ``m`` as a callable
    on support points, a mapping keyed by support tuples, or an array aligned
    with the support; the default is the law's own E(Y | W).
    """
    m = _predictor_values(dgp, predictor)
    p1 = dgp.p_exposed
    g = dgp.propensity
    exposed = g * (dgp.outcome[:, 1] - m) / p1
    unexposed = (1.0 - g) * (dgp.outcome[:, 0] - m) / (1.0 - p1)
    return float(np.sum(dgp.w_prob * (exposed - unexposed)) - psi)


def exact_expectation_Dstar(dgp: DiscreteDgp, psi: float, predictor: Predictor = None) -> float:
    """E[D*(O; psi)] for the CARE-IPW estimating function (true propensities)."""
    m = _predictor_values(dgp, predictor)
    g = dgp.propensity
    exposed = g * (dgp.outcome[:, 1] - m) / g
    unexposed = (1.0 - g) * (dgp.outcome[:, 0] - m) / (1.0 - g)
    return float(np.sum(dgp.w_prob * (exposed - unexposed)) - psi)


def care_root(dgp: DiscreteDgp, predictor: Predictor = None) -> float:
    """The psi solving E[D(O; psi)] = 0, i.e. the CARE probability limit."""
    return exact_expectation_D(dgp, 0.0, predictor)


def random_dgp(rng, size=6, dim=2, *, randomized=False, null=False) -> DiscreteDgp:
    """Draw a random law on `size` integer-valued covariate points.

    ``randomized`` gives every stratum the same propensity; ``null`` makes the
    outcome law ignore the exposure.
    """
    rng = np.random.default_rng(rng)
    support = rng.integers(-3, 4, size=(size, dim)).astype(float)
    support[:, 0] = np.arange(size)  # keep points distinct
    prob = rng.dirichlet(np.ones(size))
    prob = prob / prob.sum()
    if randomized:
        g = np.full(size, rng.uniform(0.1, 0.9))
    else:
        g = rng.uniform(0.05, 0.95, size)
    q = rng.uniform(0.02, 0.98, size=(size, 2))
    if null:
        q[:, 1] = q[:, 0]
    return DiscreteDgp(support, prob, g, q)


def sample_dgp(dgp: DiscreteDgp, n, rng) -> ClusterDataset:
    """Draw `n` i.i.d. units; covariates are one indicator column per stratum.

    Stratum indicators (columns ``S0, S1, ...``) let a no-intercept logistic
    model with all of them as main terms act as a saturated model.
    """
    rng = np.random.default_rng(rng)
    k = rng.choice(dgp.size, size=n, p=dgp.w_prob)
    a = (rng.uniform(size=n) < dgp.propensity[k]).astype(float)
    y = (rng.uniform(size=n) < dgp.outcome[k, a.astype(int)]).astype(float)
    dummies = (k[:, None] == np.arange(dgp.size)[None, :]).astype(float)
    return ClusterDataset(dummies, tuple(f"S{j}" for j in range(dgp.size)), a, y)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    passed: bool
    detail: str = ""


def theorem_checks(dgp: DiscreteDgp, predictor: Predictor = None, *, label="fixture"):
    """Evaluate every identity that applies to `dgp`.

    Randomized laws get the CARE unbiasedness check; all laws get the
    CARE-IPW check; confounded laws with an effect report the CARE bias at
    the G-computation value, which is expected to be nonzero.
    """
    checks = []
    psi_obs = exact_psi_obs(dgp)
    psi_rct = exact_psi_rct(dgp)
    if dgp.is_randomized():
        v = exact_expectation_D(dgp, psi_rct, predictor)
        checks.append(Check(f"{label}: E[D](psi_rct) = 0 under randomization", v,
                            abs(v) <= IDENTITY_TOLERANCE))
    v = exact_expectation_Dstar(dgp, psi_obs, predictor)
    checks.append(Check(f"{label}: E[D*](psi_obs) = 0", v, abs(v) <= IDENTITY_TOLERANCE))
    if not dgp.is_randomized():
        bias = exact_expectation_D(dgp, psi_obs, predictor)
        null = bool(np.all(dgp.outcome[:, 1] == dgp.outcome[:, 0]))
        if null:
            checks.append(Check(f"{label}: E[D](0) = 0 under the strong null", bias,
                                abs(bias) <= IDENTITY_TOLERANCE))
        else:
            checks.append(Check(f"{label}: E[D](psi_obs) under confounding", bias, True,
                                "informational; generally nonzero"))
    return checks

"""Synthetic trial and observational data with binary exposure and outcome.

Covariates: W1, W2 ~ N(0, 1), W3 ~ U(0, 1), W4 ~ Bernoulli(0.5).  The exposure
is a fair coin in the randomized setting and depends on W1, W2 and W4
otherwise.  Outcomes follow a logistic model in W1, W3, W4, A and A*W3; under
the null both counterfactual outcomes come from the unexposed formula.

Every replication draws its random numbers from a stream keyed on
``(master_seed, replication_index)`` only, in a fixed order, so the four
scenarios of one replication share covariates and uniforms (common random
numbers) and any replication can be generated independently of the others.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .estimators import ClusterDataset

COVARIATES = ("W1", "W2", "W3", "W4")


class Setting(str, enum.Enum):
    RCT = "RCT"
    OBSERVATIONAL = "Obs"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key in ("rct", "randomized", "randomised"):
            return cls.RCT
        if key in ("obs", "observational"):
            return cls.OBSERVATIONAL
        raise ValueError(f"unknown setting {value!r}")


class Effect(str, enum.Enum):
    EFFECT = "Effect"
    NULL = "Null"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key == "effect":
            return cls.EFFECT
        if key == "null":
            return cls.NULL
        raise ValueError(f"unknown effect {value!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    setting: Setting = Setting.RCT
    effect: Effect = Effect.EFFECT
    n_units: int = 96
    master_seed: int = 0
    replication_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "setting", Setting.parse(self.setting))
        object.__setattr__(self, "effect", Effect.parse(self.effect))
        if self.n_units < 4:
            raise ValueError("n_units must be at least 4")

    @property
    def label(self):
        return f"{self.setting.value}/{self.effect.value}"


@dataclass(frozen=True)
class CounterfactualPopulation:
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    y1: np.ndarray
    y0: np.ndarray

    @property
    def ate(self):
        return float(np.mean(self.y1 - self.y0))


def propensity_score(w1, w2, w4):
    """True P(A=1 | W) in the observational setting."""
    return expit(1.0 - 0.75 * w1 - 2.0 * w4 + 0.5 * w2)


def outcome_probability(w1, w3, w4, a):
    return expit(-0.25 + 0.5 * w1 - 1.0 * w3 + 2.0 * w4 - 1.25 * a - 0.5 * a * w3)


def _rng(master_seed, replication_index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed),
                                                                        int(replication_index)])))


def _draw(rng, n):
    w1 = rng.standard_normal(n)
    w2 = rng.standard_normal(n)
    w3 = rng.uniform(0.0, 1.0, n)
    w4 = (rng.uniform(0.0, 1.0, n) < 0.5).astype(float)
    u_a = rng.uniform(0.0, 1.0, n)
    u_y = rng.uniform(0.0, 1.0, n)
    return w1, w2, w3, w4, u_a, u_y


def _counterfactuals(w1, w3, w4, u_y, effect):
    y0 = (u_y < outcome_probability(w1, w3, w4, 0.0)).astype(float)
    if effect is Effect.NULL:
        return y0.copy(), y0
    y1 = (u_y < outcome_probability(w1, w3, w4, 1.0)).astype(float)
    return y1, y0


def generate_dataset(spec: ScenarioSpec) -> ClusterDataset:
    """One simulated sample of ``spec.n_units`` units."""
    rng = _rng(spec.master_seed, spec.replication_index)
    w1, w2, w3, w4, u_a, u_y = _draw(rng, spec.n_units)
    if spec.setting is Setting.RCT:
        a = (u_a < 0.5).astype(float)
    else:
        a = (u_a < propensity_score(w1, w2, w4)).astype(float)
    y1, y0 = _counterfactuals(w1, w3, w4, u_y, spec.effect)
    y = np.where(a == 1.0, y1, y0)
    return ClusterDataset(np.column_stack([w1, w2, w3, w4]), COVARIATES, a, y)


def generate_population(effect, population_size, seed) -> CounterfactualPopulation:
    rng = _rng(seed, 2**32 - 1)
    w1, w2, w3, w4, _, u_y = _draw(rng, int(population_size))
    y1, y0 = _counterfactuals(w1, w3, w4, u_y, Effect.parse(effect))
    return CounterfactualPopulation(w1, w2, w3, w4, y1, y0)


def true_estimand(setting, effect, population_size=100_000, seed=0) -> float:
    """Mean of Y(1) - Y(0) over a freshly drawn counterfactual population.

    The exposure mechanism does not enter, so `setting` only documents the
    scenario; under the null the result is exactly 0.
    """
    Setting.parse(setting)
    if population_size < 10_000:
        raise ValueError("population_size must be at least 10,000")
    if Effect.parse(effect) is Effect.NULL:
        return 0.0
    return generate_population(effect, population_size, seed).ate

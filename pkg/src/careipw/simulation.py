"""Monte Carlo comparison of the four estimators across four scenarios.

Each replication is a pure function of ``(config, replication_index)``.
Replications can therefore run on any number of worker processes; results
are gathered back in replication order before any reduction, so the metric
table does not depend on the worker count.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dgp import COVARIATES, Effect, ScenarioSpec, Setting, generate_dataset, true_estimand
from .estimators import Z_975, Estimator, EstimatorConfig, estimate
from .exceptions import ConfigError, NonConvergence, PositivityViolation
from .glm import Family, GlmSpec

log = logging.getLogger(__name__)

DEFAULT_SCENARIOS = (
    (Setting.RCT, Effect.EFFECT),
    (Setting.RCT, Effect.NULL),
    (Setting.OBSERVATIONAL, Effect.EFFECT),
    (Setting.OBSERVATIONAL, Effect.NULL),
)
DEFAULT_ESTIMATORS = (Estimator.CARE_IPW, Estimator.CARE, Estimator.IPW, Estimator.UNADJUSTED)
_CHUNK = 50


@dataclass(frozen=True)
class SimulationConfig:
    replications: int = 5000
    n_units: int = 96
    master_seed: int = 20191023
    workers: int = 1
    scenarios: tuple = DEFAULT_SCENARIOS
    estimators: tuple = DEFAULT_ESTIMATORS
    outcome_terms: tuple = ("W1", "W3", "W4")
    propensity_terms: tuple = ("W1", "W4")
    population_size: int = 100_000

    def __post_init__(self):
        try:
            scen = tuple((Setting.parse(s), Effect.parse(e)) for s, e in self.scenarios)
            ests = tuple(Estimator.parse(e) for e in self.estimators)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "scenarios", scen)
        object.__setattr__(self, "estimators", ests)
        object.__setattr__(self, "outcome_terms", tuple(self.outcome_terms))
        object.__setattr__(self, "propensity_terms", tuple(self.propensity_terms))
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.n_units < 4:
            raise ConfigError("n_units must be at least 4")
        if self.population_size < 10_000:
            raise ConfigError("population_size must be at least 10,000")
        unknown = set(self.outcome_terms + self.propensity_terms) - set(COVARIATES)
        if unknown:
            raise ConfigError(f"model terms reference unknown covariates {sorted(unknown)}")

    @classmethod
    def from_dict(cls, payload):
        if not isinstance(payload, dict):
            raise ConfigError("simulation config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(payload) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        out = asdict(self)
        out["scenarios"] = [[s.value, e.value] for s, e in self.scenarios]
        out["estimators"] = [e.value for e in self.estimators]
        out["outcome_terms"] = list(self.outcome_terms)
        out["propensity_terms"] = list(self.propensity_terms)
        return out

    def estimator_config(self):
        return EstimatorConfig(
            outcome_spec=GlmSpec(Family.BINOMIAL_LOGIT, self.outcome_terms),
            propensity_spec=GlmSpec(Family.BINOMIAL_LOGIT, self.propensity_terms),
        )


def load_config(path, **overrides) -> SimulationConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError("simulation config must be a JSON object")
    payload.update({k: v for k, v in overrides.items() if v is not None})
    return SimulationConfig.from_dict(payload)


@dataclass(frozen=True)
class SimulationMetrics:
    trial: str
    exposure: str
    estimator: str
    bias: float
    mc_se: float
    avg_se: float
    coverage: float
    power_or_type1: float
    replications: int
    truth: float
    n_nonconverged: int = 0


@dataclass
class SimulationResult:
    config: SimulationConfig
    rows: list
    psi_hat: np.ndarray = field(repr=False)  # (S, scenarios, estimators)
    se: np.ndarray = field(repr=False)

    def row(self, setting, effect, estimator):
        key = (Setting.parse(setting).value, Effect.parse(effect).value,
               Estimator.parse(estimator).value)
        for r in self.rows:
            if (r.trial, r.exposure, r.estimator) == key:
                return r
        raise KeyError(key)


def run_replication(config: SimulationConfig, index: int):
    """Point estimates, standard errors and non-convergence flags for one index."""
    est_config = config.estimator_config()
    shape = (len(config.scenarios), len(config.estimators))
    psi = np.empty(shape)
    se = np.empty(shape)
    failed = np.zeros(shape, dtype=bool)
    for i, (setting, effect) in enumerate(config.scenarios):
        data = generate_dataset(ScenarioSpec(setting, effect, config.n_units,
                                             config.master_seed, index))
        for j, estimator in enumerate(config.estimators):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", NonConvergence)
                warnings.simplefilter("ignore", PositivityViolation)
                result = estimate(estimator, data, est_config)
            psi[i, j] = result.psi_hat
            se[i, j] = result.se
            failed[i, j] = any(issubclass(w.category, NonConvergence) for w in caught)
    return psi, se, failed


def _run_chunk(args):
    config, start, stop = args
    out = [run_replication(config, s) for s in range(start, stop)]
    return (np.stack([o[0] for o in out]), np.stack([o[1] for o in out]),
            np.stack([o[2] for o in out]))


def _metrics(psi_hat, se, truth):
    S = psi_hat.shape[0]
    bias = float(np.mean(psi_hat - truth))
    mc_se = float(np.std(psi_hat, ddof=1)) if S > 1 else 0.0
    avg_se = float(np.mean(se))
    lower = psi_hat - Z_975 * se
    upper = psi_hat + Z_975 * se
    coverage = float(np.mean((lower <= truth) & (truth <= upper)))
    with np.errstate(divide="ignore", invalid="ignore"):
        reject = np.where(se > 0, np.abs(psi_hat / np.where(se > 0, se, 1.0)) > Z_975, psi_hat != 0)
    return bias, mc_se, avg_se, coverage, float(np.mean(reject))


def run_simulation(config: SimulationConfig) -> SimulationResult:
    S = config.replications
    if S == 1:
        warnings.warn("a single replication has no Monte Carlo spread; MC SE reported as 0",
                      RuntimeWarning, stacklevel=2)
    chunks = [(config, start, min(start + _CHUNK, S)) for start in range(0, S, _CHUNK)]
    if config.workers == 1 or len(chunks) == 1:
        parts = [_run_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(_run_chunk, chunks))
    psi = np.concatenate([p[0] for p in parts])
    se = np.concatenate([p[1] for p in parts])
    failed = np.concatenate([p[2] for p in parts])

    rows = []
    for i, (setting, effect) in enumerate(config.scenarios):
        truth = true_estimand(setting, effect, config.population_size, config.master_seed)
        for j, estimator in enumerate(config.estimators):
            bias, mc_se, avg_se, coverage, reject = _metrics(psi[:, i, j], se[:, i, j], truth)
            n_failed = int(failed[:, i, j].sum())
            if n_failed:
                log.info("%s/%s %s: %d non-converged fits", setting.value, effect.value,
                         estimator.value, n_failed)
            rows.append(SimulationMetrics(setting.value, effect.value, estimator.value, bias,
                                          mc_se, avg_se, coverage, reject, S, truth, n_failed))
    return SimulationResult(config, rows, psi, se)


TABLE_COLUMNS = ("Trial", "Exposure", "Estimator", "Bias", "MC SE", "Average SE",
                 "95% CI coverage", "Power/Type I error")
_ROW_KEYS = ("trial", "exposure", "estimator", "bias", "mc_se", "avg_se", "coverage",
             "power_or_type1")

METRICS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["replications", "rows"],
    "properties": {
        "replications": {"type": "integer", "minimum": 1},
        "config": {"type": "object"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(_ROW_KEYS) + ["truth", "replications", "n_nonconverged"],
                "properties": {
                    "trial": {"enum": [s.value for s in Setting]},
                    "exposure": {"enum": [e.value for e in Effect]},
                    "estimator": {"enum": [e.value for e in Estimator]},
                    "bias": {"type": "number"},
                    "mc_se": {"type": "number", "minimum": 0},
                    "avg_se": {"type": "number", "minimum": 0},
                    "coverage": {"type": "number", "minimum": 0, "maximum": 1},
                    "power_or_type1": {"type": "number", "minimum": 0, "maximum": 1},
                    "truth": {"type": "number"},
                    "replications": {"type": "integer", "minimum": 1},
                    "n_nonconverged": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


def _rows_of(metrics):
    if isinstance(metrics, SimulationResult):
        return metrics.rows
    return list(metrics)


def _pct(x):
    return f"{100 * x:.1f}%"


def emit_table(metrics, format="markdown") -> str:
    """Render metric rows as a markdown table, CSV or JSON document."""
    rows = _rows_of(metrics)
    if format == "markdown":
        lines = ["| " + " | ".join(TABLE_COLUMNS) + " |",
                 "|" + "|".join(["---"] * 3 + ["---:"] * 5) + "|"]
        for r in rows:
            cells = [r.trial, r.exposure, r.estimator, f"{r.bias:.3f}", f"{r.mc_se:.3f}",
                     f"{r.avg_se:.3f}", _pct(r.coverage), _pct(r.power_or_type1)]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for r in rows:
            writer.writerow([r.trial, r.exposure, r.estimator] +
                            [repr(float(getattr(r, k))) for k in _ROW_KEYS[3:]])
        return buf.getvalue()
    if format == "json":
        payload = {"replications": rows[0].replications if rows else 0,
                   "rows": [asdict(r) for r in rows]}
        if isinstance(metrics, SimulationResult):
            payload["config"] = metrics.config.to_dict()
        return json.dumps(payload, indent=2) + "\n"
    raise ValueError(f"unknown format {format!r}")


def read_metrics_json(text) -> list:
    payload = json.loads(text)
    return [SimulationMetrics(**row) for row in payload["rows"]]


def read_metrics_csv(text) -> list:
    """Parse :func:`emit_table` CSV output (metadata columns are not stored)."""
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for rec in reader:
        values = [float(rec[c]) for c in TABLE_COLUMNS[3:]]
        rows.append(SimulationMetrics(rec["Trial"], rec["Exposure"], rec["Estimator"],
                                      *values, replications=0, truth=math.nan))
    return rows

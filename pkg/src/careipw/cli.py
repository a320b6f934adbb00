"""Command-line entry point: ``careipw {simulate,estimate,oracle,report}``.

Exit codes: 0 success, 1 runtime or identity-check failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import ingest, oracle, simulation
from .estimators import ClusterDataset, Estimator, EstimatorConfig, estimate
from .exceptions import (ConfigError, IngestError, InvalidDgp, MissingColumn,
                         PositivityFailure)
from .glm import Family, GlmSpec

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
log = logging.getLogger("careipw")


class UsageError(Exception):
    pass


def _write(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_json(path):
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    if not isinstance(payload, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return payload


# simulate ------------------------------------------------------------------

def cmd_simulate(args):
    overrides = {"master_seed": args.seed, "workers": args.workers,
                 "replications": args.replications}
    if args.config:
        config = simulation.load_config(args.config, **overrides)
    else:
        config = simulation.SimulationConfig.from_dict(
            {k: v for k, v in overrides.items() if v is not None})
    result = simulation.run_simulation(config)
    _write(simulation.emit_table(result, args.format), args.out)
    return EXIT_OK


# estimate ------------------------------------------------------------------

_SCHEMA_FLAGS = {
    "cluster_id": "cluster_column",
    "age_months": "age_column",
    "female": "female_column",
    "died": "died_column",
    "follow_up_years": "follow_up_column",
    "exposed": "exposed_column",
}


def _estimate_config(args):
    config = _read_json(args.config) if args.config else {}
    known = {"level", "schema", "exposure_column", "outcome_column", "covariates",
             "predictions_column", "outcome_family", "estimators"}
    extra = set(config) - known
    if extra:
        raise UsageError(f"unknown estimate config keys {sorted(extra)}")
    return config


def _individual_dataset(args, config):
    schema = dict(config.get("schema", {}))
    for key, flag in _SCHEMA_FLAGS.items():
        if getattr(args, flag):
            schema[key] = getattr(args, flag)
    records = ingest.load_individuals(args.data, schema)
    model = ingest.fit_individual_outcome_model(records)
    data, summaries = ingest.aggregate_clusters(records, model)
    if args.summary_out:
        ingest.write_cluster_summaries(summaries, args.summary_out)
    return data, {"outcome_model": model.as_dict(), "outcome_model_converged": model.converged,
                  "n_clusters": len(summaries), "n_individuals": len(records)}


def _cluster_dataset(args, config):
    exposure = args.exposure_column or config.get("exposure_column", "exposed")
    outcome = args.outcome_column or config.get("outcome_column", "observed_rate")
    covariates = (args.covariates.split(",") if args.covariates
                  else config.get("covariates", list(ingest.CLUSTER_COVARIATES)))
    predictions = args.predictions_column or config.get("predictions_column")
    with open(args.data, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in [exposure, outcome, *covariates] + ([predictions] if predictions else []):
            if column not in header:
                raise MissingColumn(f"missing column {column!r}")
        rows = list(reader)
    frame = {c: np.array([float(r[c]) for r in rows]) for c in header
             if c in {exposure, outcome, predictions, *covariates}}
    data = ClusterDataset.from_frame(frame, covariates, exposure, outcome, predictions)
    return data, {"n_clusters": data.n}


def cmd_estimate(args):
    config = _estimate_config(args)
    level = args.level or config.get("level")
    if level is None:
        level = "cluster" if (args.predictions_column or config.get("predictions_column")) \
            else "individual"
    if level == "individual":
        data, meta = _individual_dataset(args, config)
    else:
        data, meta = _cluster_dataset(args, config)

    family = args.outcome_family or config.get("outcome_family", "poisson")
    est_config = EstimatorConfig(
        outcome_spec=None if data.predictions is not None else GlmSpec(family, data.columns),
        propensity_spec=GlmSpec(Family.BINOMIAL_LOGIT, data.columns),
    )
    names = (args.estimators.split(",") if args.estimators
             else config.get("estimators", ["unadjusted", "care", "ipw", "care_ipw"]))
    results = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for name in names:
            results.append(estimate(Estimator.parse(name), data, est_config))
    notes = sorted({f"{w.category.__name__}: {w.message}" for w in caught})

    if args.format == "json":
        text = json.dumps({"data": meta, "warnings": notes,
                           "estimates": [r.to_dict() for r in results]}, indent=2) + "\n"
    else:
        lines = ["| Estimator | Estimate | 95% CI | p-value |", "|---|---:|---|---:|"]
        for r in results:
            lines.append(f"| {r.estimator.value} | {r.psi_hat:.2f} | "
                         f"({r.ci_lower:.2f}, {r.ci_upper:.2f}) | {r.p_value:.2f} |")
        for r in results:
            if "propensity_min" in r.diagnostics:
                lines.append(f"\nFitted propensities ({r.estimator.value}): "
                             f"{r.diagnostics['propensity_min']:.2f} to "
                             f"{r.diagnostics['propensity_max']:.2f}")
                break
        lines += [f"\nwarning: {n}" for n in notes]
        text = "\n".join(lines) + "\n"
    _write(text, args.out)
    return EXIT_OK


# oracle --------------------------------------------------------------------

def cmd_oracle(args):
    checks = []
    if args.fixture:
        dgp = oracle.load_dgp(args.fixture)
        checks += oracle.theorem_checks(dgp, label=Path(args.fixture).stem)
    if args.random:
        rng = np.random.default_rng(args.seed)
        for i in range(args.random):
            randomized = oracle.random_dgp(rng, size=int(rng.integers(2, 9)), randomized=True)
            checks += oracle.theorem_checks(randomized, label=f"random-rct-{i}")
            confounded = oracle.random_dgp(rng, size=int(rng.integers(2, 9)))
            # an arbitrary (misspecified) predictor must not matter for D*
            wrong = rng.uniform(-2, 2, confounded.size)
            checks += oracle.theorem_checks(confounded, wrong, label=f"random-obs-{i}")
    if not checks:
        raise UsageError("give --fixture and/or --random N")
    n_pass = sum(c.passed for c in checks)
    if args.format == "json":
        text = json.dumps({"passed": n_pass, "total": len(checks),
                           "checks": [{"name": c.name, "value": c.value, "passed": c.passed,
                                       "detail": c.detail} for c in checks]}, indent=2) + "\n"
    else:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:+.3e}"
                 + (f"  ({c.detail})" if c.detail else "") for c in checks]
        lines.append(f"{n_pass}/{len(checks)} checks passed")
        text = "\n".join(lines) + "\n"
    _write(text, args.out)
    return EXIT_OK if n_pass == len(checks) else EXIT_FAILURE


# report --------------------------------------------------------------------

def cmd_report(args):
    try:
        text = Path(args.input).read_text()
        rows = simulation.read_metrics_json(text)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read metrics from {args.input}: {exc}") from None
    _write(simulation.emit_table(rows, args.format), args.out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="careipw", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formats=("markdown", "csv", "json")):
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=formats, default="markdown")

    p = sub.add_parser("simulate", help="run the Monte Carlo study")
    common(p)
    p.add_argument("--config", help="JSON simulation config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--replications", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate effects from a CSV file")
    common(p, ("markdown", "json"))
    p.add_argument("--data", required=True, help="individual-level or cluster-level CSV")
    p.add_argument("--config", help="JSON file with column mappings")
    p.add_argument("--level", choices=("individual", "cluster"))
    p.add_argument("--estimators", help="comma-separated subset of unadjusted,care,ipw,care_ipw")
    p.add_argument("--predictions-column", help="cluster CSV column with outcome predictions")
    p.add_argument("--exposure-column")
    p.add_argument("--outcome-column")
    p.add_argument("--covariates", help="comma-separated cluster-level covariates")
    p.add_argument("--outcome-family", choices=("poisson", "binomial"))
    p.add_argument("--summary-out", help="write the cluster summary CSV here")
    for flag in _SCHEMA_FLAGS.values():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle", help="check the estimating-function identities exactly")
    common(p, ("markdown", "json"))
    p.add_argument("--fixture", help="JSON DiscreteDgp fixture")
    p.add_argument("--random", type=int, default=0, metavar="N")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="re-render a JSON metrics file")
    common(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, MissingColumn, IngestError, InvalidDgp,
            PositivityFailure, FileNotFoundError, ValueError) as exc:
        print(f"careipw {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"careipw {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

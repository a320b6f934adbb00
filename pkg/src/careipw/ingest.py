"""Individual-level trial records to a cluster-level analysis dataset.

The outcome model is a Poisson regression of deaths on age and sex with the
log of follow-up years as offset, fitted on children and never on the
cluster assignment.  Its per-child expected deaths are summed within each
cluster and expressed, like the observed outcome, per thousand follow-up
years.
"""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .estimators import ClusterDataset
from .exceptions import (EmptyCluster, InconsistentClusterExposure, IngestError, MissingColumn,
                         NonBinaryField, NonPositiveFollowUp)
from .glm import Family, FittedGlm, GlmSpec, fit_glm, predict_response

PER = 1000.0
DEFAULT_SCHEMA = {
    "cluster_id": "cluster_id",
    "age_months": "age_months",
    "female": "female",
    "died": "died",
    "follow_up_years": "follow_up_years",
    "exposed": "exposed",
}
CLUSTER_COVARIATES = ("avg_age_months", "pct_female")


@dataclass(frozen=True)
class IndividualRecord:
    cluster_id: str
    age_months: float
    female: int
    died: int
    follow_up_years: float
    exposed: int

    @property
    def log_follow_up(self):
        return math.log(self.follow_up_years)


@dataclass(frozen=True)
class ClusterSummary:
    cluster_id: str
    n_children: int
    avg_age_months: float
    pct_female: float
    observed_rate: float
    predicted_rate: float
    exposed: int


def _binary(value, field_name, line):
    try:
        x = float(value)
    except ValueError:
        raise NonBinaryField(f"line {line}: {field_name}={value!r} is not 0/1", row=line) from None
    if x not in (0.0, 1.0):
        raise NonBinaryField(f"line {line}: {field_name}={value!r} is not 0/1", row=line)
    return int(x)


def _number(value, field_name, line):
    try:
        x = float(value)
    except ValueError:
        raise IngestError(f"line {line}: {field_name}={value!r} is not a number", row=line) from None
    if not math.isfinite(x):
        raise IngestError(f"line {line}: {field_name}={value!r} is not finite", row=line)
    return x


def parse_records(rows, schema=None):
    """Validate an iterable of dict rows (as from ``csv.DictReader``).

    Line numbers in error messages count the header as line 1.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    records = []
    exposure_of = {}
    header_checked = False
    for i, row in enumerate(rows):
        line = i + 2
        if not header_checked:
            for key, column in schema.items():
                if column not in row:
                    raise MissingColumn(f"missing column {column!r} (for {key})")
            header_checked = True
        fu = _number(row[schema["follow_up_years"]], "follow_up_years", line)
        if fu <= 0:
            raise NonPositiveFollowUp(f"line {line}: follow_up_years={fu} must be positive",
                                      row=line)
        rec = IndividualRecord(
            cluster_id=str(row[schema["cluster_id"]]).strip(),
            age_months=_number(row[schema["age_months"]], "age_months", line),
            female=_binary(row[schema["female"]], "female", line),
            died=_binary(row[schema["died"]], "died", line),
            follow_up_years=fu,
            exposed=_binary(row[schema["exposed"]], "exposed", line),
        )
        previous = exposure_of.setdefault(rec.cluster_id, rec.exposed)
        if previous != rec.exposed:
            raise InconsistentClusterExposure(
                f"line {line}: cluster {rec.cluster_id!r} has mixed exposure values", row=line)
        records.append(rec)
    return records


def load_individuals(path, schema=None):
    """Read and validate individual records from a CSV file with a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MissingColumn(f"{path} has no header row")
        wanted = {**DEFAULT_SCHEMA, **(schema or {})}
        for key, column in wanted.items():
            if column not in reader.fieldnames:
                raise MissingColumn(f"missing column {column!r} (for {key})")
        return parse_records(reader, schema)


def records_table(records):
    return {
        "age_months": np.array([r.age_months for r in records], dtype=float),
        "female": np.array([r.female for r in records], dtype=float),
        "died": np.array([r.died for r in records], dtype=float),
        "log_follow_up": np.array([r.log_follow_up for r in records], dtype=float),
    }


def individual_outcome_spec(intercept_only=False):
    terms = () if intercept_only else ("age_months", "female")
    return GlmSpec(Family.POISSON_LOG, terms, include_intercept=True, offset="log_follow_up")


def fit_individual_outcome_model(records, *, intercept_only=False) -> FittedGlm:
    """Poisson model of deaths on age and sex with a log follow-up offset."""
    if len(records) < 3:
        raise ValueError("need at least three records")
    return fit_glm(records_table(records), individual_outcome_spec(intercept_only), "died")


def _cluster_sort_key(cid):
    try:
        return (0, float(cid), cid)
    except ValueError:
        return (1, 0.0, cid)


def aggregate_clusters(records, model: FittedGlm):
    """Cluster summaries and the cluster-level dataset they define.

    Sums use :func:`math.fsum`, so results do not depend on record order.
    """
    expected = predict_response(model, records_table(records))
    groups = {}
    for rec, mu in zip(records, expected):
        groups.setdefault(rec.cluster_id, []).append((rec, float(mu)))
    summaries = []
    for cid in sorted(groups, key=_cluster_sort_key):
        members = groups[cid]
        if not members:
            raise EmptyCluster(f"cluster {cid!r} has no records")
        follow_up = math.fsum(r.follow_up_years for r, _ in members)
        deaths = math.fsum(r.died for r, _ in members)
        predicted = math.fsum(mu for _, mu in members)
        n = len(members)
        summaries.append(ClusterSummary(
            cluster_id=cid,
            n_children=n,
            avg_age_months=math.fsum(r.age_months for r, _ in members) / n,
            pct_female=math.fsum(r.female for r, _ in members) / n,
            observed_rate=PER * deaths / follow_up,
            predicted_rate=PER * predicted / follow_up,
            exposed=members[0][0].exposed,
        ))
    return cluster_dataset(summaries), summaries


def cluster_dataset(summaries) -> ClusterDataset:
    X = np.array([[s.avg_age_months, s.pct_female] for s in summaries], dtype=float)
    return ClusterDataset(
        X, CLUSTER_COVARIATES,
        np.array([s.exposed for s in summaries], dtype=float),
        np.array([s.observed_rate for s in summaries], dtype=float),
        np.array([s.predicted_rate for s in summaries], dtype=float),
        exposure_name="exposed", outcome_name="observed_rate",
    )


SUMMARY_COLUMNS = tuple(f.name for f in fields(ClusterSummary))


def write_cluster_summaries(summaries, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple(s)])


def read_cluster_summaries(path):
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append(ClusterSummary(row["cluster_id"], int(row["n_children"]),
                                      float(row["avg_age_months"]), float(row["pct_female"]),
                                      float(row["observed_rate"]), float(row["predicted_rate"]),
                                      int(row["exposed"])))
        return out

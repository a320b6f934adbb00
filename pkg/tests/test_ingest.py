import csv
import io
import math
import random

import numpy as np
import pytest
import statsmodels.api as sm

from careipw.estimators import EstimatorConfig, estimate_care, wald_inference
from careipw.exceptions import (InconsistentClusterExposure, IngestError, MissingColumn,
                                NonBinaryField, NonConvergence, NonPositiveFollowUp)
from careipw.ingest import (PER, SUMMARY_COLUMNS, aggregate_clusters,
                            fit_individual_outcome_model, load_individuals, parse_records,
                            read_cluster_summaries, records_table, write_cluster_summaries)


@pytest.fixture
def nine(fixtures_dir):
    return load_individuals(fixtures_dir / "nine_children.csv")


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


HEADER = "cluster_id,age_months,female,died,follow_up_years,exposed\n"


def test_fixture_parses(nine):
    assert len(nine) == 9
    assert [r.cluster_id for r in nine] == ["1"] * 3 + ["2"] * 3 + ["3"] * 3
    assert nine[1].died == 1 and nine[1].female == 1
    assert nine[0].log_follow_up == pytest.approx(math.log(1.5))


def test_zero_follow_up_names_the_row():
    text = HEADER + "1,12,0,0,1.5,1\n1,30,1,1,0,1\n"
    with pytest.raises(NonPositiveFollowUp, match="line 3") as info:
        parse_records(rows_of(text))
    assert info.value.row == 3


def test_mixed_exposure_in_cluster():
    text = HEADER + "1,12,0,0,1.5,1\n2,30,1,1,1.0,0\n1,40,1,0,1.0,0\n"
    with pytest.raises(InconsistentClusterExposure, match="line 4"):
        parse_records(rows_of(text))


@pytest.mark.parametrize("field, bad", [("female", "2"), ("died", "yes"), ("exposed", "0.5")])
def test_non_binary_field(field, bad):
    row = {"cluster_id": "1", "age_months": "12", "female": "0", "died": "0",
           "follow_up_years": "1", "exposed": "1"}
    row[field] = bad
    with pytest.raises(NonBinaryField, match=field):
        parse_records([row])


def test_non_numeric_age():
    with pytest.raises(IngestError, match="age_months"):
        parse_records(rows_of(HEADER + "1,abc,0,0,1.5,1\n"))


def test_missing_column(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("cluster_id,age_months,female,died,follow_up_years\n1,12,0,0,1\n")
    with pytest.raises(MissingColumn, match="exposed"):
        load_individuals(path)


def test_schema_mapping(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("village,age,sex,dead,years,net\n1,12,0,0,1.5,1\n")
    schema = {"cluster_id": "village", "age_months": "age", "female": "sex", "died": "dead",
              "follow_up_years": "years", "exposed": "net"}
    recs = load_individuals(path, schema)
    assert recs[0].cluster_id == "1" and recs[0].follow_up_years == 1.5


def _statsmodels_fit(records):
    t = records_table(records)
    X = sm.add_constant(np.column_stack([t["age_months"], t["female"]]))
    return sm.GLM(t["died"], X, family=sm.families.Poisson(), offset=t["log_follow_up"]).fit(
        tol=1e-12)


def test_poisson_fit_matches_independent_solver(nine):
    model = fit_individual_outcome_model(nine)
    assert model.converged
    ref = _statsmodels_fit(nine)
    np.testing.assert_allclose(model.coefficients, ref.params, rtol=1e-6, atol=1e-8)


def test_poisson_fit_on_larger_synthetic(trial_csv):
    recs = load_individuals(trial_csv)
    np.testing.assert_allclose(fit_individual_outcome_model(recs).coefficients,
                               _statsmodels_fit(recs).params, rtol=1e-7, atol=1e-9)


def test_intercept_only_recovers_crude_rate(nine):
    model = fit_individual_outcome_model(nine, intercept_only=True)
    crude = sum(r.died for r in nine) / sum(r.follow_up_years for r in nine)
    assert math.exp(model.coefficients[0]) == pytest.approx(crude, rel=1e-10)


def test_all_deaths_zero_surfaces_nonconvergence(nine):
    from dataclasses import replace
    survivors = [replace(r, died=0) for r in nine]
    with pytest.warns(NonConvergence):
        model = fit_individual_outcome_model(survivors)
    assert not model.converged


def test_hand_aggregation(nine):
    model = fit_individual_outcome_model(nine)
    data, summaries = aggregate_clusters(nine, model)
    assert [s.cluster_id for s in summaries] == ["1", "2", "3"]
    assert [s.n_children for s in summaries] == [3, 3, 3]
    expected_obs = [1000 / 4.3, 1000 / 3.6, 1000 / 3.8]
    np.testing.assert_allclose([s.observed_rate for s in summaries], expected_obs, rtol=1e-14)
    np.testing.assert_allclose([s.avg_age_months for s in summaries], [29, 82 / 3, 106 / 3], rtol=1e-14)
    np.testing.assert_allclose([s.pct_female for s in summaries], [1 / 3, 2 / 3, 1 / 3], rtol=1e-14)
    assert [s.exposed for s in summaries] == [1, 0, 1]
    # predicted rate by hand: exp(b0 + b1 age + b2 female) * years, summed per cluster
    b = _statsmodels_fit(nine).params
    for s, years in zip(summaries, (4.3, 3.6, 3.8)):
        members = [r for r in nine if r.cluster_id == s.cluster_id]
        total = sum(math.exp(b[0] + b[1] * r.age_months + b[2] * r.female) * r.follow_up_years
                    for r in members)
        assert s.predicted_rate == pytest.approx(1000 * total / years, rel=1e-7)
    np.testing.assert_allclose(data.outcome, expected_obs, rtol=1e-14)
    np.testing.assert_array_equal(data.exposure, [1, 0, 1])
    assert data.columns == ("avg_age_months", "pct_female")


def test_rate_aggregation_identity(trial_csv):
    recs = load_individuals(trial_csv)
    _, summaries = aggregate_clusters(recs, fit_individual_outcome_model(recs))
    total_deaths = sum(r.died for r in recs)
    follow = {}
    for r in recs:
        follow.setdefault(r.cluster_id, []).append(r.follow_up_years)
    rebuilt = math.fsum(s.observed_rate * math.fsum(follow[s.cluster_id]) / PER for s in summaries)
    assert round(rebuilt) == total_deaths
    assert rebuilt == pytest.approx(total_deaths, abs=1e-9)


def test_predicted_totals_recomputed(trial_csv):
    recs = load_individuals(trial_csv)
    model = fit_individual_outcome_model(recs)
    _, summaries = aggregate_clusters(recs, model)
    b = model.coefficients
    for s in summaries[:10]:
        members = [r for r in recs if r.cluster_id == s.cluster_id]
        mu = [math.exp(b[0] + b[1] * r.age_months + b[2] * r.female + math.log(r.follow_up_years))
              for r in members]
        years = math.fsum(r.follow_up_years for r in members)
        assert s.predicted_rate == pytest.approx(PER * math.fsum(mu) / years, rel=1e-12)
    # Poisson score equations with an intercept: total predicted = total observed deaths
    total_pred = math.fsum(s.predicted_rate * math.fsum(r.follow_up_years for r in recs
                                                        if r.cluster_id == s.cluster_id) / PER
                           for s in summaries)
    assert total_pred == pytest.approx(sum(r.died for r in recs), rel=1e-8)


def test_aggregation_is_permutation_invariant(trial_csv):
    recs = load_individuals(trial_csv)
    model = fit_individual_outcome_model(recs)
    _, a = aggregate_clusters(recs, model)
    shuffled = recs[:]
    random.Random(1).shuffle(shuffled)
    _, b = aggregate_clusters(shuffled, model)
    assert a == b


def test_pipeline_identity(trial_csv):
    recs = load_individuals(trial_csv)
    data, summaries = aggregate_clusters(recs, fit_individual_outcome_model(recs))
    assert data.n == 96 and data.exposure.sum() == 48
    res = estimate_care(data, EstimatorConfig())
    # the CARE estimating equation written out on the summary rows
    n = len(summaries)
    n1 = sum(s.exposed for s in summaries)
    resid = [s.observed_rate - s.predicted_rate for s in summaries]
    w = [s.exposed * n / n1 - (1 - s.exposed) * n / (n - n1) for s in summaries]
    psi = math.fsum(wi * ri for wi, ri in zip(w, resid)) / n
    assert res.psi_hat == pytest.approx(psi, abs=1e-10)
    ic = np.array([wi * ri for wi, ri in zip(w, resid)]) - psi
    assert res.se == pytest.approx(wald_inference(ic, psi, n)[0], rel=1e-10)


def test_summary_csv_round_trip(tmp_path, nine):
    _, summaries = aggregate_clusters(nine, fit_individual_outcome_model(nine))
    path = tmp_path / "summary.csv"
    write_cluster_summaries(summaries, path)
    assert path.read_text().splitlines()[0] == ",".join(SUMMARY_COLUMNS)
    assert read_cluster_summaries(path) == summaries

import json
import subprocess
import sys
import time

import pytest

from careipw.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main


def run(argv):
    return main([str(a) for a in argv])


def test_simulate_smoke_is_fast_and_repeatable(tmp_path):
    out1, out2 = tmp_path / "a.md", tmp_path / "b.md"
    start = time.perf_counter()
    assert run(["simulate", "--replications", 10, "--seed", 4, "--out", out1]) == EXIT_OK
    assert time.perf_counter() - start < 1.0
    assert run(["simulate", "--replications", 10, "--seed", 4, "--out", out2]) == EXIT_OK
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().strip().splitlines()
    assert len(lines) == 2 + 16


def test_simulate_json_and_report(tmp_path):
    metrics = tmp_path / "m.json"
    assert run(["simulate", "--replications", 5, "--format", "json", "--out", metrics]) == EXIT_OK
    table = tmp_path / "t.md"
    assert run(["report", "--input", metrics, "--out", table]) == EXIT_OK
    direct = tmp_path / "d.md"
    assert run(["simulate", "--replications", 5, "--out", direct]) == EXIT_OK
    assert table.read_text() == direct.read_text()


def test_simulate_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"replications": 4, "scenarios": [["RCT", "Null"]],
                               "estimators": ["Unadj"]}))
    out = tmp_path / "o.csv"
    assert run(["simulate", "--config", cfg, "--format", "csv", "--out", out]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 2


@pytest.mark.parametrize("content", ['{"replications": 0}', '{"nope": 1}', "not json"])
def test_simulate_config_errors(tmp_path, content, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(content)
    assert run(["simulate", "--config", cfg]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as info:
        run(["simulate", "--bogus"])
    assert info.value.code == 2


def _cluster_csv(path, with_exposure=True):
    header = ["avg_age_months", "pct_female", "observed_rate", "pred"]
    if with_exposure:
        header.append("exposed")
    rows = []
    for i in range(12):
        row = [20 + i, 0.4 + 0.01 * i, 30 - i + (i % 3), 29 - 0.8 * i]
        if with_exposure:
            row.append(i % 2)
        rows.append(",".join(map(str, row)))
    path.write_text(",".join(header) + "\n" + "\n".join(rows) + "\n")
    return path


def test_estimate_cluster_level_with_predictions(tmp_path):
    data = _cluster_csv(tmp_path / "c.csv")
    out = tmp_path / "r.json"
    code = run(["estimate", "--data", data, "--predictions-column", "pred", "--estimators",
                "care,unadjusted", "--format", "json", "--out", out])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    care, unadj = report["estimates"]
    assert care["estimator"] == "CARE" and unadj["estimator"] == "Unadj"
    # hand computation of the CARE estimate from the residuals
    resid = [(30 - i + (i % 3)) - (29 - 0.8 * i) for i in range(12)]
    exposed = [r for i, r in enumerate(resid) if i % 2]
    unexposed = [r for i, r in enumerate(resid) if not i % 2]
    assert care["psi_hat"] == pytest.approx(sum(exposed) / 6 - sum(unexposed) / 6, abs=1e-12)


def test_estimate_missing_exposure_column(tmp_path, capsys):
    data = _cluster_csv(tmp_path / "c.csv", with_exposure=False)
    assert run(["estimate", "--data", data, "--predictions-column", "pred"]) == EXIT_USAGE
    assert "'exposed'" in capsys.readouterr().err


def test_estimate_individual_level(tmp_path, trial_csv):
    out = tmp_path / "r.md"
    summary = tmp_path / "s.csv"
    assert run(["estimate", "--data", trial_csv, "--out", out, "--summary-out", summary]) == EXIT_OK
    text = out.read_text()
    for label in ("Unadj", "CARE", "IPW", "CARE-IPW"):
        assert f"| {label} |" in text
    assert "Fitted propensities" in text
    assert len(summary.read_text().splitlines()) == 97


def test_estimate_individual_json_is_deterministic(tmp_path, trial_csv):
    outs = [tmp_path / "a.json", tmp_path / "b.json"]
    for out in outs:
        assert run(["estimate", "--data", trial_csv, "--format", "json", "--out", out]) == EXIT_OK
    assert outs[0].read_bytes() == outs[1].read_bytes()
    report = json.loads(outs[0].read_text())
    assert report["data"]["n_clusters"] == 96


def test_estimate_bad_row(tmp_path, capsys):
    path = tmp_path / "x.csv"
    path.write_text("cluster_id,age_months,female,died,follow_up_years,exposed\n1,12,0,0,-1,1\n")
    assert run(["estimate", "--data", path]) == EXIT_USAGE
    assert "line 2" in capsys.readouterr().err


def test_oracle_fixture(fixtures_dir, tmp_path):
    out = tmp_path / "o.json"
    code = run(["oracle", "--fixture", fixtures_dir / "confounded_dgp.json", "--format", "json",
                "--out", out])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    bias = [c for c in report["checks"] if "confounding" in c["name"]][0]
    assert abs(bias["value"]) > 0.01
    assert report["passed"] == report["total"]


def test_oracle_random(tmp_path):
    out = tmp_path / "o.json"
    assert run(["oracle", "--random", 100, "--seed", 3, "--format", "json", "--out", out]) == EXIT_OK
    checks = json.loads(out.read_text())["checks"]
    rct = [c for c in checks if "randomization" in c["name"]]
    assert len(rct) == 100 and all(c["passed"] for c in rct)


def test_oracle_malformed_fixture(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"w_support": [[0]], "w_prob": [2.0]}')
    assert run(["oracle", "--fixture", path]) == EXIT_USAGE
    assert run(["oracle"]) == EXIT_USAGE


def test_oracle_failed_identity_exits_one(monkeypatch, fixtures_dir):
    from careipw import oracle
    monkeypatch.setattr(oracle, "IDENTITY_TOLERANCE", -1.0)
    assert run(["oracle", "--fixture", fixtures_dir / "confounded_dgp.json"]) == EXIT_FAILURE


def test_report_bad_input(tmp_path):
    path = tmp_path / "m.json"
    path.write_text('{"rows": [{"trial": "RCT"}]}')
    assert run(["report", "--input", path]) == EXIT_USAGE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "careipw", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout

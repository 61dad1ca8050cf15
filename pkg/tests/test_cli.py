import json
from pathlib import Path

import numpy as np
import pytest

from sibcross.cli import main
from sibcross.data import Dataset
from sibcross.dgp import preset, simulate_dataset
from sibcross.estimators import fit_bw_model
from sibcross.fixtures import TOY_PAIR_DIFFERENCES, TOY_SCORE_CSV, scores_from_dataset, twin_score_table

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--preset", "scenario4", "--seed", "1", "--out", str(a)]) == 0
    assert main(["simulate", "--preset", "scenario4", "--seed", "1", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert len(lines) == 1001 and lines[0] == "family_id,x1,x2,y1,y2"
    assert main(["simulate", "--preset", "scenario4", "--seed", "1", "--with-latent", "--out", str(b)]) == 0
    assert b.read_text().splitlines()[0].endswith("u,alpha,alpha_tilde")


def test_simulate_config_file(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('preset = "scenario1"\nseed = 4\n[dgp]\nn_families = 25\n')
    out = tmp_path / "d.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    direct = simulate_dataset(preset("scenario1").replace(n_families=25), 4).to_csv(with_latent=False)
    assert out.read_text() == direct
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"preset": "scenario1", "seed": 4, "dgp": {"n_families": 25}}))
    assert main(["simulate", "--config", str(js), "--out", str(out)]) == 0
    assert out.read_text() == direct


def test_config_and_io_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("x = [")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == 2
    unknown = tmp_path / "u.toml"
    unknown.write_text("[dgp]\nbeta_q = 1\n")
    assert main(["simulate", "--config", str(unknown)]) == 2
    assert main(["simulate", "--preset", "scenario9"]) == 2
    assert main(["simulate", "--seed", "-3"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--out", str(blocker / "d.csv")]) == 3
    assert main(["run-scenarios", "--reps", "1", "--out", str(blocker)]) == 3
    assert "error" in capsys.readouterr().err


def test_run_scenarios_smoke(tmp_path):
    out = tmp_path / "o"
    assert main(["run-scenarios", "--reps", "10", "--out", str(out), "--quiet"]) == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "scenario,procedure,n,mean,bias,sd"
    assert len(summary) == 1 + 4 * 4
    for s in ("scenario1", "scenario4"):
        assert (out / f"{s}.txt").exists() and (out / f"{s}_raw.csv").exists()
    assert len((out / "scenario2_raw.csv").read_text().splitlines()) == 11


def test_run_scenarios_validation(tmp_path):
    assert main(["run-scenarios", "--reps", "2", "--procedures", "BW,FOO", "--out", str(tmp_path)]) == 2
    cfg = tmp_path / "s.toml"
    cfg.write_text('n_replications = 2\nbogus = 1\n[[scenarios]]\npreset = "scenario4"\n')
    assert main(["run-scenarios", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_run_scenarios_config_with_selection(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text(
        'seed = 5\nn_replications = 3\nprocedures = ["BW", "SELECTION"]\n'
        '[[scenarios]]\nlabel = "sel"\npreset = "scenario4"\ndgp = { n_families = 300 }\n'
        'selection = { intercept = 0.0, slope = 0.3 }\n'
    )
    assert main(["run-scenarios", "--config", str(cfg), "--out", str(tmp_path), "--quiet"]) == 0
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    assert rows[1].startswith("sel,BW,3,") and rows[2].startswith("sel,SELECTION,3,")


def test_run_scenarios_all_missing_exit_code(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text('n_replications = 2\nprocedures = ["BW"]\n[[scenarios]]\nlabel = "one"\ndgp = { n_families = 1 }\n')
    assert main(["run-scenarios", "--config", str(cfg), "--out", str(tmp_path), "--quiet"]) == 4


def test_run_scenarios_thread_count_invariant(tmp_path):
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / threads
        argv = ["run-scenarios", "--preset", "scenario1", "--reps", "6", "--seed", "9", "--threads", threads,
                "--out", str(out), "--quiet"]
        assert main(argv) == 0
        outs.append(out)
    for name in ("summary.csv", "scenario1_raw.csv", "report.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_report_rerenders_summary(tmp_path, capsys):
    main(["run-scenarios", "--preset", "scenario4", "--reps", "4", "--out", str(tmp_path), "--quiet"])
    capsys.readouterr()
    assert main(["report", "--input", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "scenario4" in text and "target tau3 = 5.0000" in text
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    assert main(["report", "--input", str(tmp_path / "x.csv")]) == 2


def analyze(tmp_path, path, *extra):
    out = tmp_path / "an"
    code = main(["analyze", "--input", str(path), "--out", str(out), "--quiet", *extra])
    doc = json.loads((out / "estimates.json").read_text()) if (out / "estimates.json").exists() else None
    return code, doc, out


def test_analyze_scores_matches_conditional_ols(tmp_path):
    text, d = twin_score_table(preset("scenario4"), 7)
    path = tmp_path / "scores.csv"
    path.write_text(text)
    code, doc, out = analyze(tmp_path, path, "--bootstrap", "50", "--truncation", "percentile:0.99841")
    assert code == 0
    bw = doc["bw_model"]["coefficients"]["beta_w"]["estimate"]
    cols = doc["conditional_ols"]["estimate"]
    assert abs(bw - cols) <= 1e-8 * (1 + abs(cols))
    assert doc["n_families"] == 1000 and doc["n_discordant"] == int(d.discordant.sum())
    boot = doc["weighted_contrast"]["bootstrap"]
    est = doc["weighted_contrast"]["estimate"]
    assert boot["ci_low"] == pytest.approx(est - 1.959964 * boot["boot_se"], abs=1e-12)
    assert boot["ci_high"] == pytest.approx(est + 1.959964 * boot["boot_se"], abs=1e-12)
    coef = doc["bw_model"]["coefficients"]["beta_b"]
    assert coef["ci_high"] - coef["estimate"] == pytest.approx(1.959964 * coef["std_error"])
    weights = (out / "weights.csv").read_text().splitlines()
    assert weights[0] == "family_id,sibling,arm,weight,excluded" and len(weights) == 2001


def test_score_threshold_recovers_exposures():
    d = simulate_dataset(preset("scenario1").replace(n_families=300), 2)
    rows = [line.split(",") for line in scores_from_dataset(d, 2).splitlines()[1:]]
    s1 = np.array([float(r[1]) for r in rows])
    s2 = np.array([float(r[2]) for r in rows])
    np.testing.assert_array_equal(s1 < -15, d.x1 == 1)
    np.testing.assert_array_equal(s2 < -15, d.x2 == 1)


def test_analyze_toy_fixture(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text(TOY_SCORE_CSV)
    code, doc, _ = analyze(tmp_path, path, "--bootstrap", "0")
    assert code == 0
    assert doc["bw_model"]["coefficients"]["beta_w"]["estimate"] == pytest.approx(np.mean(TOY_PAIR_DIFFERENCES), abs=1e-12)
    assert doc["conditional_ols"]["estimate"] == pytest.approx(4.0, abs=1e-12)


def test_bundled_fixtures_are_current():
    text, d = twin_score_table(preset("scenario4"), 2024)
    assert (FIXTURES / "twin_scores.csv").read_text() == text
    assert (FIXTURES / "toy_three_families.csv").read_text() == TOY_SCORE_CSV
    assert Dataset.from_csv(FIXTURES / "twin_dataset.csv").to_csv() == d.to_csv(with_latent=False)


def test_analyze_dataset_csv_round_trip(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["simulate", "--preset", "scenario4", "--seed", "3", "--out", str(path)]) == 0
    code, doc, _ = analyze(tmp_path, path, "--bootstrap", "0")
    assert code == 0 and doc["schema"] == "dataset"
    fit = fit_bw_model(simulate_dataset(preset("scenario4"), 3))
    got = doc["bw_model"]["coefficients"]
    assert abs(got["beta_w"]["estimate"] - fit.beta_w_hat) <= 1e-12
    assert abs(got["beta_b"]["estimate"] - fit.beta_b_hat) <= 1e-12
    assert abs(got["intercept"]["estimate"] - fit.mu_hat) <= 1e-12


def test_analyze_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("family_id,score1,y1,y2\n1,-20,1.0,2.0\n")
    assert main(["analyze", "--input", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text("family_id,score1,score2,y1,y2\n1,-20,oops,1.0,2.0\n")
    assert main(["analyze", "--input", str(bad), "--out", str(tmp_path)]) == 2
    dup = tmp_path / "dup.csv"
    dup.write_text("family_id,score1,score2,y1,y2\n1,-20,-5,1.0,2.0\n1,-20,-5,1.0,2.0\n")
    assert main(["analyze", "--input", str(dup), "--out", str(tmp_path)]) == 2
    assert main(["analyze", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 3
    assert main(["analyze", "--input", str(dup), "--bootstrap", "1"]) == 2
    assert main(["analyze", "--input", str(dup), "--threshold", "nan"]) == 2


def test_analyze_all_concordant_reports_missing(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("family_id,score1,score2,y1,y2\n1,-20,-20,1.0,2.0\n2,-5,-5,3.0,2.5\n3,-30,-16,4.0,4.5\n")
    code, doc, _ = analyze(tmp_path, path)
    assert code == 4
    assert doc["bw_model"]["missing_reason"] == "INSUFFICIENT_DATA"
    assert doc["bw_model"]["coefficients"]["beta_w"]["estimate"] is None


def test_crossover_demo(tmp_path, capsys):
    cfg = FIXTURES / "crossover_zero_noise.toml"
    assert main(["crossover-demo", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    rows = {line[:36].strip(): line[36:].split() for line in text.splitlines()[1:4]}
    assert rows["beta_hat (period differences)"][0] == "4.0000"
    assert rows["beta_hat (cosibling substitution)"][0] == "3.0000"
    assert rows["lambda1_hat - lambda0_hat"][0] == "2.0000"
    assert (tmp_path / "crossover.csv").read_text().startswith("family_id,sibling,arm,period,y\n")
    assert main(["crossover-demo", "--config", str(tmp_path / "missing.toml")]) == 2
    bad = tmp_path / "b.json"
    bad.write_text('{"beta": 1, "gamma": 2}')
    assert main(["crossover-demo", "--config", str(bad)]) == 2


def test_crossover_demo_no_aliasing(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"crossover": {"n_families": 20000, "beta": 2.0, "lambda0": 0.5, "lambda1": 0.5}}))
    assert main(["crossover-demo", "--config", str(cfg), "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()[1:3]
    for line in lines:
        est, se, _ = (float(v) for v in line[36:].split())
        assert abs(est - 2.0) <= 3 * se


def test_version_and_usage(capsys):
    assert main(["--version"]) == 0
    assert main([]) == 2

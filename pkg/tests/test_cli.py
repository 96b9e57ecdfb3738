import json
import time

import pytest

from portastat import cli, simulate
from portastat.cli import main
from portastat.core import NonFiniteLoss
from portastat.pipeline import RunSettings, run_pipeline
from portastat.report import parse_json
from portastat.simulate import SimConfig

SMALL_CONFIG = """\
n_train_per_pop = 300
n_val_per_pop = 200
n_test_low = 300
n_test_high = 400
d_ehr = 40
d_ekg = 10
"""


@pytest.fixture(scope="module")
def small_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.txt").write_text(SMALL_CONFIG)
    code = main(["run-all", "--config", str(root / "small.txt"), "--out", str(root / "run"),
                 "--seed", "2", "--replicates", "100", "--threads", "1"])
    assert code == 0
    return root


def write_scores(path, rows):
    path.write_text("id,population,label,score\n" + "".join(f"{r}\n" for r in rows))
    return path


@pytest.mark.parametrize(
    "argv",
    [
        ["run-all", "--out", "x", "--bogus"],
        ["run-all"],
        ["frobnicate"],
        ["diagnose", "a.csv"],
        ["run-all", "--out", "x", "--replicates", "5"],
        ["train", "--cohort", "c.csv", "--kind", "xyz", "--population", "low", "--out", "m.txt"],
    ],
)
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "run-all" in capsys.readouterr().out


def test_run_all_layout(small_dir, capsys):
    run = small_dir / "run"
    for name in ("report.json", "summary.txt", "table1.csv", "config.txt",
                 "cohorts/ehr_cohort.csv", "cohorts/ekg_cohort.csv", "cohorts/truth.csv"):
        assert (run / name).is_file(), name
    assert len(list((run / "models").glob("*.txt"))) == 4
    assert len(list((run / "scores").glob("*.csv"))) == 8
    assert len(list((run / "figures").glob("*.svg"))) == 14
    assert parse_json((run / "report.json").read_text()).validate() == []


def test_diagnose_identical_files(tmp_path, capsys):
    rows = [f"p{i},high,{i % 2},{(i * 37 % 100) / 100}" for i in range(60)]
    p = write_scores(tmp_path / "m.P.csv", rows)
    out = tmp_path / "d.json"
    assert main(["diagnose", str(p), str(p), str(out), "--replicates", "100", "--threads", "1"]) == 0
    doc = json.loads(out.read_text())
    assert doc["model_id"] == "m"
    assert [c["statistic"] for c in doc["covariate_stability"]] == [0.0, 0.0]
    assert doc["predictive_stability"]["summaries"][0]["value"] == 0.0


def test_diagnose_out_of_range_score_names_the_row(tmp_path, capsys):
    good = write_scores(tmp_path / "q.csv", ["a,low,0,0.2", "b,low,1,0.4"])
    bad = write_scores(tmp_path / "p.csv", ["x,high,0,0.3", "y,high,1,1.2"])
    assert main(["diagnose", str(bad), str(good), str(tmp_path / "o.json")]) == 2
    err = capsys.readouterr().err
    assert "p.csv:3" in err and "'y'" in err and "load scores" in err


def test_diagnose_malformed_csv_reports_line(tmp_path, capsys):
    good = write_scores(tmp_path / "q.csv", ["a,low,0,0.2", "b,low,1,0.4"])
    bad = write_scores(tmp_path / "p.csv", ["x,high,0,0.3", "y,high,1"])
    assert main(["diagnose", str(bad), str(good), str(tmp_path / "o.json")]) == 2
    assert "p.csv:3" in capsys.readouterr().err


def test_diagnose_empty_conditional_exits_2(tmp_path, capsys):
    p = write_scores(tmp_path / "p.csv", [f"p{i},high,0,0.{i}" for i in range(1, 9)])
    q = write_scores(tmp_path / "q.csv", [f"q{i},low,{i % 2},0.{i}" for i in range(1, 9)])
    assert main(["diagnose", str(p), str(q), str(tmp_path / "o.json")]) == 2
    assert "diagnose" in capsys.readouterr().err


def test_missing_input_file_exits_2(tmp_path, capsys):
    assert main(["diagnose", str(tmp_path / "nope.csv"), str(tmp_path / "nope.csv"), str(tmp_path / "o")]) == 2


def test_diagnose_matches_run_all_section(small_dir, tmp_path):
    report = json.loads((small_dir / "run" / "report.json").read_text())
    for mid in ("ehr-low", "ekg-high"):
        out = tmp_path / f"{mid}.json"
        code = main(["diagnose", str(small_dir / "run" / "scores" / f"{mid}.P.csv"),
                     str(small_dir / "run" / "scores" / f"{mid}.Q.csv"), str(out),
                     "--seed", "2", "--replicates", "100", "--threads", "2"])
        assert code == 0
        doc = json.loads(out.read_text())
        cs = [{k: v for k, v in c.items() if k != "histograms"} for c in report["covariate_stability"]
              if c["model_id"] == mid]
        assert doc["covariate_stability"] == cs
        ps = report["predictive_stability"]
        assert doc["predictive_stability"]["curves"] == [c for c in ps["curves"] if c["model_id"] == mid]
        assert doc["predictive_stability"]["summaries"] == [s for s in ps["summaries"] if s["model_id"] == mid]


def test_report_subcommand_reproduces_figures(small_dir, capsys):
    out = small_dir / "rerender"
    assert main(["report", "--report", str(small_dir / "run" / "report.json"), "--out", str(out)]) == 0
    for svg in (small_dir / "run" / "figures").glob("*.svg"):
        assert (out / "figures" / svg.name).read_bytes() == svg.read_bytes()
    assert (out / "summary.txt").read_text() == (small_dir / "run" / "summary.txt").read_text()


def test_stage_commands_chain(small_dir, tmp_path, capsys):
    cfg = str(small_dir / "small.txt")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "sim"), "--seed", "2"]) == 0
    # the stand-alone simulate output matches the cohorts written by run-all with the same seed
    assert (tmp_path / "sim" / "ekg_cohort.csv").read_bytes() == (
        small_dir / "run" / "cohorts" / "ekg_cohort.csv"
    ).read_bytes()
    model = tmp_path / "m.txt"
    assert main(["train", "--cohort", str(tmp_path / "sim" / "ekg_cohort.csv"), "--kind", "ekg",
                 "--population", "high", "--out", str(model), "--seed", "2"]) == 0
    assert model.read_text() == (small_dir / "run" / "models" / "ekg-high.txt").read_text()
    scores = tmp_path / "ekg-high.P.csv"
    assert main(["score", "--model", str(model), "--cohort", str(tmp_path / "sim" / "ekg_cohort.csv"),
                 "--population", "high", "--out", str(scores)]) == 0
    assert scores.read_text() == (small_dir / "run" / "scores" / "ekg-high.P.csv").read_text()


def test_seed_falls_back_to_environment(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(SMALL_CONFIG)
    monkeypatch.setenv("PORTASTAT_SEED", "11")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.delenv("PORTASTAT_SEED")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "11"]) == 0
    assert (tmp_path / "a" / "ehr_cohort.csv").read_bytes() == (tmp_path / "b" / "ehr_cohort.csv").read_bytes()
    assert "seed = 11" in (tmp_path / "a" / "config.txt").read_text()


def test_thread_count_does_not_change_outputs(small_dir, tmp_path, capsys):
    code = main(["run-all", "--config", str(small_dir / "small.txt"), "--out", str(tmp_path / "t3"),
                 "--seed", "2", "--replicates", "100", "--threads", "3"])
    assert code == 0
    ref = small_dir / "run"
    for path in sorted(ref.rglob("*")):
        if path.is_file():
            assert (tmp_path / "t3" / path.relative_to(ref)).read_bytes() == path.read_bytes(), path.name


def test_numerical_failures_exit_3(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(SMALL_CONFIG)
    monkeypatch.setattr(simulate, "BISECTION_ITERATIONS", 2)
    assert main(["run-all", "--config", str(cfg), "--out", str(tmp_path / "r"), "--replicates", "0"]) == 3
    assert "pipeline" in capsys.readouterr().err
    monkeypatch.undo()

    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0

    def diverge(*args, **kwargs):
        raise NonFiniteLoss("loss became non-finite")

    monkeypatch.setattr(cli, "train", diverge)
    code = main(["train", "--cohort", str(tmp_path / "s" / "ehr_cohort.csv"), "--kind", "ehr",
                 "--population", "low", "--out", str(tmp_path / "m.txt")])
    assert code == 3
    assert "error in train" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("n_train_per_pop = many\n")
    assert main(["run-all", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    assert "config" in capsys.readouterr().err


def test_scaled_down_pipeline_is_fast():
    start = time.perf_counter()
    result = run_pipeline(SimConfig(n_train_per_pop=50), RunSettings(seed=0, replicates=0))
    assert time.perf_counter() - start < 1.0
    assert result.report.validate() == []

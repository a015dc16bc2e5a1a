import json
import shutil
import time
from pathlib import Path

import pytest

from dnlskam import cli
from dnlskam.cli import ExperimentConfig, golden_check, main, run_pipeline, write_golden
from dnlskam.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="module")
def minimal_runs(tmp_path_factory):
    cfg = ExperimentConfig.load(CONFIGS / "minimal.json")
    runs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(f"minimal_{name}")
        t0 = time.perf_counter()
        rep = run_pipeline(cfg, out)
        runs.append((rep, time.perf_counter() - t0))
    return runs


def test_invalid_pair_is_rejected_at_parse():
    with pytest.raises(ConfigurationError, match="n₁ is odd and \\|n₂−n₁\\|=4"):
        ExperimentConfig.from_dict({"seed": 0, "pair": [2, 6]})
    with pytest.raises(ConfigurationError, match="n₁ is odd"):
        ExperimentConfig.from_dict({"seed": 0, "pair": [1, 3]})


def test_config_needs_seed_and_known_keys():
    with pytest.raises(ConfigurationError, match="seed"):
        ExperimentConfig.from_dict({"pair": [1, 5]})
    with pytest.raises(ConfigurationError, match="unknown"):
        ExperimentConfig.from_dict({"seed": 0, "colour": "red"})
    with pytest.raises(ConfigurationError, match="unknown"):
        ExperimentConfig.from_dict({"seed": 0, "kam": {"steps": 3}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"seed": 0, "diophantine": {"tau": 4}})


def test_config_round_trip():
    cfg = ExperimentConfig.load(CONFIGS / "acceptance.json")
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.kam.nu_max == 4 and cfg.pair == (1, 5)


def test_minimal_pipeline_is_fast_and_passes(minimal_runs):
    rep, seconds = minimal_runs[0]
    assert seconds < 30.0
    assert rep.exit_code == 0 and rep.summary["passed"]
    assert all(s["status"] == "ok" for s in rep.summary["stages"].values())
    assert set(rep.summary["metrics"]) == set(cli.checks.ACCEPTANCE_NAMES)
    for name in ("config.json", "summary.json", "timings.json", "kam/steps.jsonl", "measure/scan.csv",
                 "normal_form/manifest.json", "frequencies/table.csv"):
        assert (rep.directory / name).is_file()


def test_rerun_gives_identical_summary(minimal_runs):
    (a, _), (b, _) = minimal_runs
    assert (a.directory / "summary.json").read_bytes() == (b.directory / "summary.json").read_bytes()


def test_stage_error_is_recorded(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "STAGES", (("frequencies", cli._stage_frequencies),
                                        ("simulation", cli._stage_simulation)))
    cfg = ExperimentConfig.from_dict({"seed": 0, "j_max": 3, "sim": {"scheme": "euler", "T": 2.0}})
    rep = run_pipeline(cfg, tmp_path)
    assert rep.summary["stages"]["frequencies"]["status"] == "ok"
    sim = rep.summary["stages"]["simulation"]
    assert sim["status"] == "error" and sim["error"].startswith("ConfigurationError")
    assert (tmp_path / "errors" / "simulation.txt").is_file()
    assert rep.summary["metrics"]["stability"]["value"] is None
    assert rep.exit_code == 1


def test_exit_codes():
    ok = {"stages": {"a": {"status": "ok"}}, "passed": True}
    assert cli.exit_code(ok) == 0
    assert cli.exit_code(dict(ok, passed=False)) == 2
    assert cli.exit_code({"stages": {"a": {"status": "error"}}, "passed": True}) == 1


def test_golden_identical_and_within_tolerance(minimal_runs, tmp_path):
    rep, _ = minimal_runs[0]
    gold = tmp_path / "gold"
    assert golden_check(rep.summary, gold).skipped
    write_golden(rep.summary, gold)
    assert golden_check(rep.summary, gold).passed
    bumped = json.loads(json.dumps(rep.summary))
    m = bumped["metrics"]["measure_law"]
    m["value"] *= 1 + 1e-9
    assert golden_check(bumped, gold).passed
    m["value"] *= 1 + 1e-6
    diff = golden_check(bumped, gold)
    assert not diff.passed and diff.differences[0].startswith("value: metrics.measure_law.value")


def test_golden_structural_failure(minimal_runs, tmp_path):
    rep, _ = minimal_runs[0]
    write_golden(rep.summary, tmp_path)
    broken = json.loads(json.dumps(rep.summary))
    del broken["metrics"]["plane_wave"]
    diff = golden_check(broken, tmp_path)
    assert not diff.passed
    assert any(d.startswith("structural: metrics.plane_wave") for d in diff.differences)


def test_golden_manifest_field_tolerance(tmp_path):
    report = {"metrics": {"x": {"value": 1.0}, "y": {"value": 2.0}}}
    write_golden(report, tmp_path, {"default": {"abs": 0.0, "rel": 0.0}, "fields": {"metrics.x": {"abs": 0.1}}})
    near = {"metrics": {"x": {"value": 1.05}, "y": {"value": 2.0}}}
    assert golden_check(near, tmp_path).passed
    off = {"metrics": {"x": {"value": 1.0}, "y": {"value": 2.0 + 1e-12}}}
    assert not golden_check(off, tmp_path).passed


def test_cli_golden_command(minimal_runs, tmp_path, capsys):
    rep, _ = minimal_runs[0]
    summary = str(rep.directory / "summary.json")
    gold = str(tmp_path / "gold")
    assert main(["golden", "check", "--report", summary, "--goldens", gold]) == 0
    assert "SKIP" in capsys.readouterr().out
    assert main(["golden", "check", "--report", summary, "--goldens", gold, "--update"]) == 0
    assert main(["golden", "check", "--report", summary, "--goldens", gold]) == 0
    changed = tmp_path / "changed.json"
    data = json.loads(Path(summary).read_text())
    data["seed"] = 99
    changed.write_text(json.dumps(data))
    assert main(["golden", "check", "--report", str(changed), "--goldens", gold]) == 2
    assert "value: seed" in capsys.readouterr().out


def test_cli_model_and_normal_form(tmp_path, capsys):
    model = tmp_path / "model"
    assert main(["model", "build", "--j-max", "3", "--out", str(model)]) == 0
    assert (model / "Lambda.json").is_file() and (model / "G.json").is_file()
    capsys.readouterr()
    assert main(["nf", "run", "--model", str(model), "--out", str(tmp_path / "nf")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["residual"] <= 1e-13
    assert (tmp_path / "nf" / "manifest.json").is_file()


def test_cli_rejects_bad_pair(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["model", "build", "--pair", "2,6", "--out", "unused"])
    assert exc.value.code == 2
    assert "n₁ is odd" in capsys.readouterr().err


def test_cli_freq_table(capsys):
    assert main(["freq", "table", "--xi1", "0", "--xi2", "0", "--modes", "2,3"]) == 0
    rows = capsys.readouterr().out.strip().split("\n")
    assert rows[0] == "xi1,xi2,omega1,omega2,Omega_2,Omega_3"
    assert rows[1].split(",")[2:] == ["1.0", "25.0", "4.0", "9.0"]


def test_cli_measure_scan(tmp_path, capsys):
    args = ["measure", "scan", "--epsilon", "1e-3", "--c", "1", "--gammas", "1e-3,5e-4", "--samples", "500",
            "--K-max", "6", "--J-max", "10", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = (tmp_path / "scan.csv").read_text().strip().split("\n")
    assert rows[0] == "gamma,estimate,ci95" and len(rows) == 3
    assert float(rows[1].split(",")[1]) >= float(rows[2].split(",")[1])
    assert (tmp_path / "histogram.json").is_file()


def test_cli_kam_run(tmp_path, capsys):
    cfg = tmp_path / "kam.json"
    cfg.write_text(json.dumps({"seed": 0, "j_max": 4, "kam": {"nu_max": 0}}))
    assert main(["kam", "run", "--config", str(cfg), "--out", str(tmp_path / "kam")]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines) == 1 and json.loads(lines[0])["nu"] == 0
    assert (tmp_path / "kam" / "steps.jsonl").is_file()


def test_cli_sim_run(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["sim", "run", "--T", "1", "--grid", "32", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mass_drift"] <= 1e-10
    assert (out / "mode_1.csv").is_file() and (out / "mode_5.csv").is_file()


def test_cli_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"pair": [1, 5]}))
    assert main(["pipeline", "run", "--config", str(bad)]) == 1
    assert "seed" in capsys.readouterr().err
    assert main(["pipeline", "run", "--config", str(tmp_path / "missing.json")]) == 1
    assert main(["sim", "run", "--dt", "1000", "--out", str(tmp_path / "s")]) == 1


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env_out"))
    cfg = ExperimentConfig.from_dict({"seed": 0, "output": "ignored"})
    assert cfg.output_dir() == tmp_path / "env_out"
    monkeypatch.delenv(cli.OUTPUT_ENV)
    assert cfg.output_dir() == Path("ignored")


def test_pipeline_command_with_no_stages(minimal_runs, tmp_path, monkeypatch, capsys):
    rep, _ = minimal_runs[0]
    monkeypatch.setattr(cli, "STAGES", ())
    cfg = tmp_path / "cfg.json"
    shutil.copy(CONFIGS / "minimal.json", cfg)
    out = tmp_path / "run"
    code = main(["pipeline", "run", "--config", str(cfg), "--out", str(out)])
    # with no stages nothing is produced and nothing passes
    assert code == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == rep.summary["seed"] and summary["passed"] is False
    assert all(m["pass"] is None for m in summary["metrics"].values())

import json
import math

import numpy as np
import pytest

from sbmocc.harness import cli
from sbmocc.harness.config import ExperimentConfig
from sbmocc.harness.persist import (ChecksumError, RunExistsError, FAILED_MARKER, load_run, persist_run,
                                    verify_run)
from sbmocc.harness.suite import CriterionResult, SuiteSettings, verdict_dict
from sbmocc.kernel import ConfigurationError


@pytest.fixture(autouse=True)
def _root(tmp_path, monkeypatch):
    monkeypatch.setenv("SBMOCC_OUTPUT_ROOT", str(tmp_path / "runs"))
    monkeypatch.delenv("SBMOCC_WORKERS", raising=False)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig("moments", {"moments": {"d": 4, "eps": 0.01, "s": [1.0, 2.0]}, "extra": {"k": "v"}})
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg
    assert cfg.get("s", list) == ["1.0", "2.0"]
    assert cfg.get_floats("s") == [1.0, 2.0]
    assert cfg.get("d", int) == 4
    path = tmp_path / "c.ini"
    path.write_text(cfg.to_text())
    assert ExperimentConfig.load(path) == cfg


def test_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        ExperimentConfig("nonsense")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_text("[moments]\nd = 4\n")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_text("not a config")
    with pytest.raises(ConfigurationError):
        ExperimentConfig("hitting", {"hitting": {"d": "four"}}).get("d", int)


def test_merge_flags_win():
    cfg = ExperimentConfig("hitting", {"hitting": {"d": "3", "eps": "0.1"}})
    m = cfg.merged({"d": 5, "eps": None})
    assert m.get("d", int) == 5 and m.get("eps", float) == 0.1
    assert cfg.get("d", int) == 3


def _write(name, text):
    return {name: lambda p: p.write_text(text)}


def test_persist_round_trip_and_tamper(tmp_path):
    cfg = ExperimentConfig("hitting", {"hitting": {"d": "3"}})
    rec = persist_run(cfg, _write("a.csv", "1,2\n"), tmp_path / "r", seed=4)
    back = load_run(tmp_path / "r")
    assert back.config == cfg and back.seed == 4 and back.files == rec.files
    verify_run(tmp_path / "r")
    (tmp_path / "r" / "a.csv").write_text("1,3\n")
    with pytest.raises(ChecksumError):
        verify_run(tmp_path / "r")


def test_persist_collision(tmp_path):
    cfg = ExperimentConfig("hitting")
    persist_run(cfg, _write("a", "x"), tmp_path / "r")
    with pytest.raises(RunExistsError):
        persist_run(cfg, _write("a", "y"), tmp_path / "r")
    persist_run(cfg, _write("a", "y"), tmp_path / "r", force=True)
    assert (tmp_path / "r" / "a").read_text() == "y"


def test_failed_run_leaves_marker(tmp_path):
    def boom(p):
        raise RuntimeError("writer failed")

    cfg = ExperimentConfig("hitting")
    with pytest.raises(RuntimeError):
        persist_run(cfg, {"a": lambda p: p.write_text("ok"), "b": boom}, tmp_path / "r")
    assert not (tmp_path / "r").exists()
    assert (tmp_path / "r.partial" / FAILED_MARKER).exists()
    assert not (tmp_path / "r.partial" / "manifest.json").exists()


def test_verdict_dict():
    res = [CriterionResult(1, "a", True, "ok", {"x": np.float64(1.5), "y": math.inf}),
           CriterionResult(2, "b", False, "no")]
    v = verdict_dict(res, SuiteSettings(seed=3, quick=True))
    assert v["all_passed"] is False
    assert json.loads(json.dumps(v))["criteria"][0]["metrics"]["y"] == "inf"
    assert res[0].line().startswith("[PASS] criterion 1")


def test_cli_hitting_reference(tmp_path, capsys):
    assert cli.main(["hitting", "--d", "3", "--eps", "1e-5", "--probe", "2.0", "--out", str(tmp_path / "h")]) == 0
    out = capsys.readouterr().out
    assert "u(2) = 0.25" in out and "exact_point_hitting=0.25" in out
    for name in ("hitting.json", "hitting.png", "manifest.json", "config.ini"):
        assert (tmp_path / "h" / name).exists()


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main(["simulate", "--d", "4", "--start", "3", "--trials", "10"]) == 2
    assert "--seed is required" in capsys.readouterr().err
    assert cli.main(["hitting", "--bogus"]) == 2
    assert cli.main(["analyze", "--seed", "1"]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("garbage")
    assert cli.main(["hitting", "--config", str(bad)]) == 2
    assert cli.main(["simulate", "--seed", "1", "--d", "4", "--start", "3", "--walk", "lazy",
                     "--t-max", "5"]) == 2


def test_cli_domain_error_nonzero(tmp_path):
    assert cli.main(["hitting", "--d", "4", "--eps", "1", "--r-max", "5", "--out", str(tmp_path / "x")]) == 1
    assert (tmp_path / "x.partial").exists() is False


def test_cli_config_file_and_collision(tmp_path):
    conf = tmp_path / "m.ini"
    conf.write_text("[experiment]\nkind = moments\n\n[moments]\nd = 5\neps = 1.0\np-max = 2\ns = 1,2\nkappa = 7.3\n")
    out = tmp_path / "m"
    assert cli.main(["moments", "--config", str(conf), "--out", str(out), "--p-max", "3"]) == 0
    snap = ExperimentConfig.load(out / "config.ini")
    assert snap.get("p-max", int) == 3 and snap.get("d", int) == 5
    assert cli.main(["moments", "--config", str(conf), "--out", str(out)]) == 2
    first = json.loads((out / "manifest.json").read_text())
    assert cli.main(["moments", "--config", str(conf), "--out", str(out), "--p-max", "3", "--force"]) == 0
    assert json.loads((out / "manifest.json").read_text()) == first


def test_cli_simulate_deterministic_and_analyze(tmp_path):
    args = ["simulate", "--d", "4", "--start", "3", "--trials", "3e4", "--seed", "1"]
    assert cli.main(args + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma == mb
    assert cli.main(["analyze", "--run", str(tmp_path / "a"), "--seed", "2", "--out", str(tmp_path / "f")]) == 0
    fit = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert fit["scale"] == pytest.approx(math.log(3))
    assert (tmp_path / "f" / "cdf.csv").exists() and (tmp_path / "f" / "cdf.png").exists()
    with open(tmp_path / "a" / "outcomes.csv", "a") as fh:
        fh.write("0\n")
    assert cli.main(["analyze", "--run", str(tmp_path / "a"), "--seed", "2", "--out", str(tmp_path / "g")]) == 1


def test_cli_conditioned_and_probe(tmp_path):
    base = ["simulate", "--d", "4", "--start", "3", "--seed", "5"]
    assert cli.main(base + ["--mode", "conditioned", "--target-hits", "150", "--trials", "1e6", "--levels", "1,0",
                            "--out", str(tmp_path / "c")]) == 0
    data = np.loadtxt(tmp_path / "c" / "sample.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == 2 and np.all(data[:, 0] >= 1)
    assert cli.main(base + ["--mode", "probe", "--trials", "2e4", "--out", str(tmp_path / "p")]) == 0
    summary = json.loads((tmp_path / "p" / "summary.json").read_text())
    assert 0 < summary["estimate"] <= 1


def test_cli_suite_subset(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["suite", "--seed", "7", "--quick", "--only", "2,4", "--out", str(out)]) == 0
    v = json.loads((out / "verdict.json").read_text())
    assert [c["id"] for c in v["criteria"]] == [2, 4] and v["all_passed"]
    assert (out / "verdicts.png").exists()

import csv
import json
import shutil
from pathlib import Path

import jsonschema
import pytest

from advrec.attacks import default_workers
from advrec.cli import main
from advrec.env import ConfigError
from advrec.report import REPORT_SCHEMA

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.json"


def run(cmd, out, *extra, config=SMOKE):
    argv = [cmd, "--out", str(out), *extra]
    if config is not None:
        argv += ["--config", str(config)]
    return main(argv)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    assert run("train-agent", out) == 0
    assert run("attack", out, "--sweep") == 0
    assert run("detect", out) == 0
    assert run("report", out) == 0
    return out


def test_missing_config_is_a_usage_error(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run("train-agent", tmp_path, config=missing) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 0, "agent": {"gamma": 2.0, "epochs": 1}}))
    assert run("train-agent", tmp_path, config=cfg) == 2


def test_attack_without_agent(tmp_path, capsys):
    assert run("attack", tmp_path) == 2
    assert "train-agent" in capsys.readouterr().err


def test_train_outputs(pipeline):
    report = json.loads((pipeline / "agent" / "train_report.json").read_text())
    assert len(report["mean_reward_curve"]) == 5
    assert len(rows(pipeline / "agent" / "training_curve.csv")) == 5


def test_checkpoint_is_reproducible(pipeline, tmp_path):
    assert run("train-agent", tmp_path) == 0
    assert (tmp_path / "agent" / "agent.json").read_bytes() == (pipeline / "agent" / "agent.json").read_bytes()


def test_seed_flag_overrides_config(pipeline, tmp_path):
    assert run("train-agent", tmp_path, "--seed", "8") == 0
    assert (tmp_path / "agent" / "agent.json").read_bytes() != (pipeline / "agent" / "agent.json").read_bytes()


def test_attack_outputs(pipeline):
    d = pipeline / "attack"
    assert sorted(p.name for p in d.glob("*.jsonl")) == ["benign.jsonl", "fgsm_l1.jsonl", "fgsm_linf.jsonl", "none.jsonl"]
    assert len(list(d.glob("*.report.json"))) == 3
    table = rows(d / "comparison.csv")
    assert [r["name"] for r in table] == ["none", "fgsm_l1", "fgsm_linf"]
    for path in d.glob("*.csv"):
        assert b"\r\n" not in path.read_bytes()


def test_none_row_matches_clean_metrics(pipeline):
    from advrec.analysis import trajectory_metrics
    from advrec.cli import build_world
    from advrec.config import load_config
    from advrec.env import read_jsonl

    world = build_world(load_config(SMOKE))
    benign = read_jsonl(pipeline / "attack" / "benign.jsonl")
    none = rows(pipeline / "attack" / "comparison.csv")[0]
    clean = trajectory_metrics(benign, world.relevant, 10)
    assert float(none["ndcg"]) == pytest.approx(clean.ndcg, abs=1e-6)
    assert float(none["achieved_frequency"]) == 0.0


def test_sweep_has_one_row_per_frequency(pipeline):
    for kind in ("random", "timed"):
        table = rows(pipeline / "attack" / f"sweep_{kind}.csv")
        assert len(table) == 10
        assert {r["scheduler"] for r in table} == {kind}


def test_detect_outputs(pipeline):
    table = rows(pipeline / "detect" / "prf.csv")
    assert [r["attack"] for r in table] == ["fgsm_l1", "fgsm_linf"]
    rep = json.loads((pipeline / "detect" / "detect_report.json").read_text())
    assert rep["train_users"] + rep["test_users"] == 24
    assert len(rep["history"]) == 3


def test_detect_empty_adversarial_list(pipeline, tmp_path):
    shutil.copytree(pipeline / "agent", tmp_path / "agent")
    shutil.copytree(pipeline / "attack", tmp_path / "attack")
    assert run("detect", tmp_path, "--adversarial") == 2


def test_detect_single_class_input_fails(pipeline, tmp_path):
    benign = str(pipeline / "attack" / "benign.jsonl")
    assert run("detect", tmp_path, "--benign", benign, "--adversarial", benign) != 0


def test_manifest_lists_existing_artifacts(pipeline):
    manifest = json.loads((pipeline / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"train-agent", "attack", "detect"}
    for entry in manifest["stages"].values():
        for artifact in entry["artifacts"]:
            assert (pipeline / artifact).stat().st_size > 0


def test_report_validates_and_draws_charts(pipeline):
    doc = json.loads((pipeline / "report.json").read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["stages"] == ["train-agent", "attack", "detect"]
    assert doc["charts"] == ["sweep_random.svg", "sweep_timed.svg", "training_curve.svg"]
    for name in doc["charts"]:
        assert (pipeline / name).read_text().startswith("<svg")


def test_report_after_training_only(pipeline, tmp_path):
    shutil.copytree(pipeline / "agent", tmp_path / "agent")
    manifest = json.loads((pipeline / "manifest.json").read_text())
    manifest["stages"] = {"train-agent": manifest["stages"]["train-agent"]}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    assert run("report", tmp_path, config=None) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert "agent" in doc and "attack" not in doc and "detect" not in doc
    assert doc["warnings"] == []


def test_report_needs_an_existing_directory(tmp_path):
    assert run("report", tmp_path / "absent", config=None) == 2


def test_workers_env(monkeypatch):
    monkeypatch.setenv("ADVREC_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("ADVREC_WORKERS", "0")
    with pytest.raises(ConfigError):
        default_workers()
    monkeypatch.delenv("ADVREC_WORKERS")
    assert default_workers() >= 1


def test_parallel_attack_matches_serial(pipeline, tmp_path, monkeypatch):
    shutil.copytree(pipeline / "agent", tmp_path / "agent")
    monkeypatch.setenv("ADVREC_WORKERS", "2")
    assert run("attack", tmp_path) == 0
    for name in ("benign.jsonl", "fgsm_l1.jsonl", "comparison.csv"):
        assert (tmp_path / "attack" / name).read_bytes() == (pipeline / "attack" / name).read_bytes()


def test_bad_worker_env_exit_code(pipeline, tmp_path, monkeypatch):
    shutil.copytree(pipeline / "agent", tmp_path / "agent")
    monkeypatch.setenv("ADVREC_WORKERS", "many")
    assert run("attack", tmp_path) == 2

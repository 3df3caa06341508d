import json
from pathlib import Path

import pytest

from advrec.config import ExperimentConfig, load_config, parse_config
from advrec.env import ConfigError

ROOT = Path(__file__).resolve().parents[1]


@pytest.mark.parametrize("name", ["example.json", "smoke.json"])
def test_shipped_configs_parse(name):
    cfg = load_config(ROOT / "configs" / name)
    assert isinstance(cfg, ExperimentConfig)
    assert len(cfg.digest()) == 64


def test_digest_tracks_content():
    a = parse_config({"seed": 1})
    assert a.digest() == parse_config({"seed": 1}).digest()
    assert a.digest() != parse_config({"seed": 2}).digest()


def test_spec_lookup():
    cfg = parse_config({"seed": 0, "attacks": [{"family": "fgsm_l1", "epsilon": 1.0, "name": "strong"}]})
    assert cfg.spec("strong").epsilon == 1.0
    with pytest.raises(ConfigError, match="no attack named"):
        cfg.spec("weak")


@pytest.mark.parametrize("doc, match", [
    ([], "JSON object"),
    ({}, "seed"),
    ({"seed": 0, "colour": 1}, "unknown top-level"),
    ({"seed": 0, "world": {"n_user": 3}}, "unknown keys"),
    ({"seed": 0, "world": 3}, "expected an object"),
    ({"seed": 0, "attacks": [{"family": "fgsm_l1", "epsilon": 1.0}] * 2}, "unique"),
    ({"seed": 0, "attacks": [{"family": "fgsm_l9", "epsilon": 1.0}]}, "unknown attack family"),
    ({"seed": 0, "attacks": [{"family": "fgsm_l1", "epsilon": 0.0}]}, "epsilon"),
    ({"seed": 0, "sweep": {"attacks": ["jsma"]}}, "not in the grid"),
    ({"seed": 0, "detector": {"eval_attacks": ["jsma"]}}, "not in the grid"),
    ({"seed": 0, "attacks": [{"family": "jsma", "epsilon": 1.0}], "sweep": {"frequencies": [0.0]}}, "frequencies"),
    ({"seed": 0, "world": {"embeddings": "nowhere.json"}}, "not found"),
])
def test_rejections(doc, match, tmp_path):
    with pytest.raises(ConfigError, match=match):
        parse_config(doc, tmp_path)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{seed: 0")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_relative_embedding_path_resolves_against_config_dir(tmp_path):
    (tmp_path / "emb.json").write_text("{}")
    (tmp_path / "c.json").write_text(json.dumps({"seed": 0, "world": {"embeddings": "emb.json"}}))
    assert load_config(tmp_path / "c.json").world.embeddings == str(tmp_path / "emb.json")

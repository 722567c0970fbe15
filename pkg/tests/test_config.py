"""Run configuration: strict unknown-key rejection with dotted paths,
default documentation, content hashing."""

import json

import pytest

from cassr.config import ConfigError, RunConfig


def test_defaults_load():
    cfg = RunConfig()
    assert cfg["train"]["lr"] == 5e-4
    assert cfg["train"]["batch"] == 4
    assert cfg["schedule"]["t_max"] == 200
    assert cfg["corpus"]["n"] == 1000


def test_override_merge():
    cfg = RunConfig({"train": {"lr": 1e-3}, "corpus": {"n": 10}})
    assert cfg["train"]["lr"] == 1e-3
    assert cfg["train"]["batch"] == 4  # untouched default
    assert cfg["corpus"]["n"] == 10


def test_unknown_key_names_dotted_path():
    with pytest.raises(ConfigError, match="train.momentum"):
        RunConfig({"train": {"momentum": 0.9}})
    with pytest.raises(ConfigError, match="^unknown config key: turbo$"):
        RunConfig({"turbo": True})


def test_table_type_mismatch():
    with pytest.raises(ConfigError, match="expects a table"):
        RunConfig({"train": 5})


def test_hash_stable_and_sensitive():
    a = RunConfig()
    b = RunConfig()
    c = RunConfig({"train": {"lr": 1e-3}})
    assert a.hash == b.hash
    assert a.hash != c.hash
    assert len(a.hash) == 16


def test_load_from_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"sampler": {"cfg_scale": 3.0}}))
    cfg = RunConfig.load(p)
    assert cfg["sampler"]["cfg_scale"] == 3.0


def test_load_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="JSON"):
        RunConfig.load(p)


def test_derived_configs():
    cfg = RunConfig({"schedule": {"t_max": 77}})
    assert cfg.model_config().t_max == 77
    assert cfg.codec_config().c_lat == 4
    assert cfg.degradation_config().scale_factor == 4

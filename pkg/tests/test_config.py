"""Run configuration: JSON loading, nested sections, strict keys."""

import json

import pytest

from lanecast.config import (
    DataConfig, ModelConfig, RunConfig, TrainConfig, config_hash, load_config,
)
from lanecast.errors import ConfigError, ParseError


def test_defaults_validate():
    RunConfig().validate()


def test_load_nested_sections():
    doc = {
        "seed": 5,
        "model": {"d": 32, "l_graph": 2},
        "train": {"batch_size": 4, "total_epochs": 20},
        "data": {"n_scenes": 3, "gen": {"n_lanes": 3, "noise_sigma": 0.2}},
    }
    cfg = load_config(json.dumps(doc))
    assert cfg.seed == 5
    assert cfg.model.d == 32
    assert cfg.train.batch_size == 4
    assert cfg.data.gen.n_lanes == 3
    assert cfg.data.gen.noise_sigma == 0.2
    # untouched fields keep defaults
    assert cfg.model.k_modes == 6
    assert cfg.train.periods == (6, 12, 24, 48)


def test_unknown_key_reports_path():
    with pytest.raises((ConfigError, ParseError)) as e:
        load_config(json.dumps({"model": {"dd": 1}}))
    assert "dd" in str(e.value)


def test_tuple_fields_come_back_as_tuples():
    cfg = load_config(json.dumps({
        "train": {"periods": [6, 12], "stage2_start_epoch": 6},
        "data": {"gen": {"speed_range": [3, 6]}}}))
    assert cfg.train.periods == (6, 12)
    assert cfg.data.gen.speed_range == (3.0, 6.0)


def test_stage2_start_must_match_first_period():
    with pytest.raises(ConfigError):
        TrainConfig(stage2_start_epoch=4).validate()


def test_model_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d=7).validate()
    with pytest.raises(ConfigError):
        ModelConfig(tau_actor=0.0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(output_scale=-1.0).validate()


def test_precision_restricted():
    with pytest.raises(ConfigError):
        TrainConfig(precision="float16").validate()


def test_config_hash_stable_and_sensitive():
    a = RunConfig()
    b = RunConfig()
    assert config_hash(a) == config_hash(b)
    c = RunConfig(seed=99)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 12


def test_bad_json_rejected():
    with pytest.raises(ConfigError):
        load_config("{not json")

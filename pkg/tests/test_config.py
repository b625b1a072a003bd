import json

import pytest

from tadner.config import RunConfig, config_from_dict, load_config
from tadner.errors import ConfigError


def test_defaults_mirror_reference_settings():
    cfg = RunConfig()
    assert cfg.optimizer.learning_rate == 3e-5
    assert cfg.optimizer.warmup_fraction == 0.01
    assert cfg.optimizer.batch_size == 64
    assert cfg.dropout == 0.2
    assert cfg.temperature == 0.05


def test_beta_defaults_by_shot_count():
    cfg = RunConfig()
    assert cfg.finetune_config(k_shot=1).beta == 2
    assert cfg.finetune_config(k_shot=5).beta == 6
    cfg.finetune.beta = 4
    assert cfg.finetune_config(k_shot=1).beta == 4


def test_finetune_lr_inherits_optimizer_lr():
    cfg = RunConfig()
    assert cfg.finetune_config(1).learning_rate == cfg.optimizer.learning_rate
    cfg.finetune.learning_rate = 0.5
    assert cfg.finetune_config(1).learning_rate == 0.5


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"surprise": True})
    with pytest.raises(ConfigError):
        config_from_dict({"optimizer": {"lr": 1.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"encoder": []})


def test_value_validation():
    with pytest.raises(ConfigError):
        config_from_dict({"scheme": "XYZ"})
    with pytest.raises(ConfigError):
        config_from_dict({"temperature": 0.0})
    with pytest.raises(ConfigError):
        config_from_dict({"dropout": 1.0})
    with pytest.raises(ConfigError):
        config_from_dict({"protocol": "oops"})
    with pytest.raises(ConfigError):
        config_from_dict({"workers": 0})


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(
        json.dumps({"seed": 5, "encoder": {"dim": 20}, "zero_shot": True}), encoding="utf-8"
    )
    cfg = load_config(path)
    assert cfg.seed == 5 and cfg.encoder.dim == 20 and cfg.zero_shot
    pipeline_cfg = cfg.pipeline_config(k_shot=1)
    assert pipeline_cfg.ablations.no_span_finetune and pipeline_cfg.ablations.no_type_finetune


def test_load_config_bad_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_builtin_name_map_reference():
    cfg = config_from_dict({"name_map": "builtin:conll"})
    assert cfg.load_name_map().name_for("MISC") == "miscellaneous"
    assert RunConfig().load_name_map() is None

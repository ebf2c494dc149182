import json
import math

import pytest

from rlgs2d.config import ConfigError, RunConfig, default_config_path


def test_shipped_config_loads_and_validates():
    rc = RunConfig.load(default_config_path()).validate()
    assert rc.rlgs_config().K == 20
    assert rc.train_config().total_iters % rc["rlgs.K"] == 0


def test_shipped_config_covers_every_key():
    raw = json.loads(default_config_path().read_text())
    assert set(RunConfig().values) <= set(raw)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig({"rlgs.KK": 3})


@pytest.mark.parametrize(
    "key,text,value",
    [
        ("rlgs.K", "10", 10),
        ("hp.lr_color", "0.5", 0.5),
        ("hp.lr_color", "1", 1.0),
        ("rlgs.no_gru", "true", True),
        ("rlgs.no_gru", "0", False),
        ("train.densify_end", "null", None),
        ("data.scale_range", "[0.9, 1.1]", [0.9, 1.1]),
        ("rlgs.reward_metric", "l1", "l1"),
    ],
)
def test_string_overrides_are_coerced(key, text, value):
    assert RunConfig().update({key: text})[key] == value


def test_bad_boolean_rejected():
    with pytest.raises(ConfigError):
        RunConfig({"rlgs.no_gru": "maybe"})


@pytest.mark.parametrize(
    "values",
    [
        {"rlgs.K": 30},
        {"rlgs.reward_set_len": 14},
        {"data.views": 8},
        {"hp.split_factor": 0.5},
        {"search.n_trials": 0},
        {"train.densify_start": 5000},
    ],
)
def test_invalid_combinations_rejected(values):
    with pytest.raises(ConfigError):
        RunConfig(values).validate()


def test_resolved_config_roundtrips(tmp_path):
    rc = RunConfig({"seed": 7, "hp.lr_color": 0.03})
    rc.save(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back.values == rc.values
    assert back.hyperparams() == rc.hyperparams()
    assert back.train_config() == rc.train_config()


def test_sections_build_component_configs():
    rc = RunConfig({"seed": 3, "data.views": 12, "rlgs.no_rlds": True})
    assert rc.train_config().seed == 3
    assert rc.dataset_config().views == 12
    assert rc.rlgs_config().no_rlds
    assert rc.rlgs_config().log_sigma_base_init == pytest.approx(math.log(0.2))


def test_unreadable_config(tmp_path):
    (tmp_path / "x.json").write_text("{nope")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "y.json")

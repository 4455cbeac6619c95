"""Config loading: defaults, deep merge, fraction parsing, stable hashing."""

import json

import pytest

from soidetect import config, soi, xbar
from soidetect.errors import ConfigError


def test_defaults_validate():
    cfg = config.load_config()
    assert cfg["dataset"]["name"] == "synthetic"
    assert cfg["seeds"] == [1, 2, 3]
    assert cfg["phase1"]["lambda_adv"] > cfg["phase1"]["lambda_clean"]


def test_nested_override_keeps_siblings():
    cfg = config.load_config(overrides={"phase1": {"epochs": 3}})
    assert cfg["phase1"]["epochs"] == 3
    assert cfg["phase1"]["lambda_clean"] == 0.1
    assert cfg["phase1"]["attack"]["eps"] == "16/255"


def test_unknown_key_reports_dotted_path():
    with pytest.raises(ConfigError, match="phase1.lrr"):
        config.load_config(overrides={"phase1": {"lrr": 1}})
    with pytest.raises(ConfigError, match="unknown config key"):
        config.load_config(overrides={"phases": {}})


def test_options_dict_is_replaced_not_merged():
    cfg = config.load_config(overrides={
        "dataset": {"options": {"n_train": 50, "n_test": 20}}})
    assert cfg["dataset"]["options"] == {"n_train": 50, "n_test": 20}


def test_file_loading(tmp_path):
    p = tmp_path / "exp.json"
    p.write_text(json.dumps({"seeds": [7], "phase2": {"epochs": 1}}))
    cfg = config.load_config(str(p))
    assert cfg["seeds"] == [7]
    assert cfg["phase2"]["epochs"] == 1
    assert cfg["phase2"]["lr"] == 1e-3

    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="not valid JSON"):
        config.load_config(str(bad))

    lst = tmp_path / "list.json"
    lst.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        config.load_config(str(lst))


def test_hash_is_order_independent_and_value_sensitive():
    a = config.load_config()
    b = config.load_config()
    assert config.config_hash(a) == config.config_hash(b)
    # same content, different insertion order
    shuffled = dict(reversed(list(a.items())))
    assert config.config_hash(shuffled) == config.config_hash(a)
    c = config.load_config(overrides={"seeds": [1, 2, 4]})
    assert config.config_hash(c) != config.config_hash(a)


def test_fraction_strings_become_floats():
    cfg = config.load_config()
    spec = config.phase1_config(cfg["phase1"], seed=5).attack
    assert spec.eps == 16 / 255
    assert spec.alpha == 8 / 255
    assert spec.n == 10


def test_section_builders():
    cfg = config.load_config()
    tc = config.train_config(cfg["pretrain"], seed=9)
    assert isinstance(tc, soi.TrainConfig)
    assert (tc.epochs, tc.seed, tc.optimizer) == (8, 9, "sgd")
    p1 = config.phase1_config(cfg["phase1"], seed=2)
    assert p1.optimizer == "adam"
    assert p1.lambda_adv == 0.6
    p2 = config.phase2_config(cfg["phase2"], seed=2)
    assert p2.attack.eps == 4 / 255
    xc = config.crossbar_config(cfg["crossbar"])
    assert isinstance(xc, xbar.CrossbarConfig)
    assert xc.rows == 128


def test_model_layers():
    cfg = config.load_config()
    layers = config.model_layers(cfg["model"], n_classes=4)
    assert len(layers) == 8
    assert layers[0].kind == "conv2d"
    assert layers[-1].out_features == 4

    custom = {"preset": None, "layers": [
        {"kind": "dense", "out_features": 3}], "quant_bits": 0}
    got = config.model_layers(custom, n_classes=3)
    assert len(got) == 1 and got[0].out_features == 3

    with pytest.raises(ConfigError, match="unknown model preset"):
        config.model_layers({"preset": "resnet", "layers": None}, 2)


def test_validation_errors():
    with pytest.raises(ConfigError, match="at least one seed"):
        config.load_config(overrides={"seeds": []})
    with pytest.raises(ConfigError, match="unknown dataset"):
        config.load_config(overrides={"dataset": {"name": "svhn"}})
    with pytest.raises(ConfigError, match="bins"):
        config.load_config(overrides={"lut": {"bins": 4}})
    with pytest.raises(ConfigError, match="unknown detector mode"):
        config.load_config(overrides={"eval": {"modes": ["soft"]}})
    with pytest.raises(ConfigError, match="quant_bits"):
        config.load_config(overrides={"model": {"quant_bits": 1}})
    with pytest.raises(ConfigError, match="unknown energy overrides"):
        config.load_config(overrides={"energies": {"e_dac": 1.0}})
    with pytest.raises(ConfigError, match="must not be empty"):
        config.load_config(overrides={"eval": {"attacks": []}})


def test_surrogate_attack_requires_enabled_surrogate():
    over = {"eval": {"attacks": [
        {"family": "pgd", "eps": "8/255", "alpha": "2/255", "n": 10,
         "surrogate": True}]}}
    with pytest.raises(ConfigError, match="surrogate"):
        config.load_config(overrides=over)
    over["surrogate"] = {"enabled": True}
    cfg = config.load_config(overrides=over)
    assert config.eval_attacks(cfg)[0].surrogate

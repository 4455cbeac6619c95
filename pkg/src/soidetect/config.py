"""Experiment configuration: JSON in, validated sections out, stable hashing.

A config file only needs the keys that differ from the defaults below; user
values are deep-merged over them.  Numeric attack fields accept exact
fraction strings ("8/255").  The canonical-JSON sha256 of the merged config
is embedded in every artifact a run writes, so stages can refuse to resume
from artifacts produced under a different configuration.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os

from . import nn, attacks, soi, xbar, energy
from .errors import ConfigError


def default_config() -> dict:
    return {
        "dataset": {
            "name": "synthetic",
            "data_dir": None,
            "seed": 12345,
            "options": {},
        },
        "model": {
            "preset": "minivgg",
            "layers": None,
            "quant_bits": 0,
        },
        "seeds": [1, 2, 3],
        "pretrain": {"epochs": 8, "lr": 3e-2, "batch_size": 64,
                     "optimizer": "sgd"},
        "phase1": {
            "lambda_clean": 0.1,
            "lambda_adv": 0.6,
            "beta": 1e-6,
            "epochs": 50,
            "lr": 3e-2,
            "batch_size": 64,
            "optimizer": "adam",
            "attack": {"family": "pgd", "eps": "16/255", "alpha": "8/255", "n": 10},
        },
        "phase2": {
            "epochs": 4,
            "lr": 1e-3,
            "batch_size": 64,
            "optimizer": "adam",
            "attack": {"family": "pgd", "eps": "4/255", "alpha": "2/255", "n": 10},
        },
        "lut": {
            "bins": 64,
            "smoothing": 1,
            "attack": {"family": "pgd", "eps": "8/255", "alpha": "4/255", "n": 10},
        },
        "eval": {
            "attacks": [
                {"family": "pgd", "eps": "8/255", "alpha": "2/255", "n": 10},
                {"family": "pgd", "eps": "16/255", "alpha": "4/255", "n": 10},
                {"family": "pgd", "eps": "32/255", "alpha": "4/255", "n": 10},
                {"family": "pgd", "eps": "32/255", "alpha": "8/255", "n": 10},
            ],
            "modes": ["threshold", "stochastic"],
            "stochastic_draws": 32,
        },
        "surrogate": {"enabled": False, "seed_offset": 9001,
                      "epochs": 8, "lr": 3e-2, "batch_size": 64,
                      "optimizer": "sgd"},
        "crossbar": {
            "rows": 128,
            "cols": 128,
            "device_bits": 2,
            "devices_per_weight": 4,
            "on_off_ratio": 10.0,
            "g_min": 1e-6,
            "variation_sigma": 0.0,
            "mux_ratio": 8,
            "adc_bits": 8,
            "device_preset": None,
            "seed": 77,
        },
        "energies": {},          # overrides for ComponentEnergies fields
        "sweep": {"axis": None, "values": None},
        "output_dir": "runs/out",
    }


def _deep_merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in (
                "options", "energies"):
            out[k] = _deep_merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError(f"{path} must contain a JSON object")
        cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# section builders


def model_layers(cfg_model: dict, n_classes: int):
    if cfg_model.get("layers"):
        return [nn.layer_from_dict(d) for d in cfg_model["layers"]]
    preset = cfg_model.get("preset", "minivgg")
    if preset != "minivgg":
        raise ConfigError(f"unknown model preset {preset!r}")
    return [
        # wide stem: a 5x5 first conv keeps the clean response dominated by
        # the smooth stroke content rather than by pixel-level noise pickup
        nn.Conv2d(8, kernel=5, stride=1, pad=2),
        nn.Relu(),
        nn.Conv2d(16, kernel=3, stride=2, pad=1),
        nn.Relu(),
        nn.Flatten(),
        nn.Dense(64),
        nn.Relu(),
        nn.Dense(n_classes),
    ]


def train_config(section: dict, seed: int) -> soi.TrainConfig:
    return soi.TrainConfig(epochs=section["epochs"], lr=section["lr"],
                           batch_size=section["batch_size"], seed=seed,
                           optimizer=section["optimizer"])


def phase1_config(section: dict, seed: int) -> soi.Phase1Config:
    return soi.Phase1Config(
        lambda_clean=section["lambda_clean"],
        lambda_adv=section["lambda_adv"],
        beta=section["beta"],
        epochs=section["epochs"],
        lr=section["lr"],
        batch_size=section["batch_size"],
        seed=seed,
        optimizer=section["optimizer"],
        attack=attacks.attack_from_json(section["attack"]),
    )


def phase2_config(section: dict, seed: int) -> soi.Phase2Config:
    return soi.Phase2Config(
        epochs=section["epochs"], lr=section["lr"],
        batch_size=section["batch_size"], seed=seed,
        optimizer=section["optimizer"],
        attack=attacks.attack_from_json(section["attack"]),
    )


def crossbar_config(section: dict) -> xbar.CrossbarConfig:
    fields = {k: v for k, v in section.items() if k != "seed"}
    return xbar.CrossbarConfig(**fields)


def component_energies(section: dict) -> energy.ComponentEnergies:
    allowed = {"e_adder", "e_register", "e_rng", "e_lut_access"}
    bad = set(section) - allowed
    if bad:
        raise ConfigError(f"unknown energy overrides: {sorted(bad)}")
    return energy.ComponentEnergies(**section)


def eval_attacks(cfg: dict) -> list:
    return [attacks.attack_from_json(a) for a in cfg["eval"]["attacks"]]


def validate_config(cfg: dict) -> None:
    """Instantiate every typed section once so bad values fail up front."""
    if not cfg["seeds"]:
        raise ConfigError("need at least one seed")
    ds = cfg["dataset"]
    if ds["name"] not in ("mnist", "fashion_mnist", "cifar10_subset", "synthetic"):
        raise ConfigError(f"unknown dataset {ds['name']!r}")
    phase1_config(cfg["phase1"], 0)
    phase2_config(cfg["phase2"], 0)
    train_config(cfg["pretrain"], 0)
    attacks.attack_from_json(cfg["lut"]["attack"])
    if cfg["lut"]["bins"] < 8:
        raise ConfigError("lut.bins must be >= 8")
    specs = eval_attacks(cfg)
    if not specs:
        raise ConfigError("eval.attacks must not be empty")
    for m in cfg["eval"]["modes"]:
        if m not in ("threshold", "stochastic"):
            raise ConfigError(f"unknown detector mode {m!r}")
    if any(s.surrogate for s in specs) and not cfg["surrogate"]["enabled"]:
        raise ConfigError("an eval attack needs a surrogate; enable the "
                          "surrogate section")
    crossbar_config(cfg["crossbar"])
    component_energies(cfg["energies"])
    qb = cfg["model"]["quant_bits"]
    if qb and not 2 <= qb <= 16:
        raise ConfigError("model.quant_bits must be 0 or in [2,16]")


def atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)

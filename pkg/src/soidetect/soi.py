"""The SoI signature and the two training phases that shape it.

SoI ("sum of currents") is the mean absolute bias-free pre-activation of
layer 0, one number per input.  On a crossbar it corresponds to summing the
magnitudes of all column currents of the first layer, normalised by the
number of multiply-accumulate outputs so typical values are order unity.

Phase 1 retrains the whole network with a loss that pins the SoI of clean
inputs near ``lambda_clean`` and the SoI of (strong, fixed) adversarial
inputs near ``lambda_adv``, keeping a small cross-entropy term so the
classifier does not collapse.  Phase 2 freezes layer 0 (so the signature
learned in phase 1 is preserved verbatim) and repairs accuracy by standard
adversarial training against weak attacks regenerated every batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn, attacks
from .errors import ConfigError, NumericError


def compute_soi(model: nn.ModelGraph, x: np.ndarray):
    """Mean |pre-activation| of layer 0 (bias excluded) per sample.

    Accepts a single sample or a batch; returns a float or a (B,) array
    correspondingly.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == model.input_shape
    if single:
        x = x[None]
    _, z0 = nn.forward(model, x)
    vals = np.abs(z0).reshape(x.shape[0], -1).mean(axis=1)
    return float(vals[0]) if single else vals


def soi_distribution(model: nn.ModelGraph, x: np.ndarray, y=None,
                     attack: attacks.AttackSpec | None = None,
                     surrogate: nn.ModelGraph | None = None,
                     batch_size: int = 256) -> np.ndarray:
    """SoI values over a dataset, optionally after attacking it first."""
    out = []
    for i in range(0, len(x), batch_size):
        xb = x[i:i + batch_size]
        if attack is not None:
            if y is None:
                raise ConfigError("attacked distributions need labels")
            xb = attacks.run_attack(model, xb, y[i:i + batch_size], attack,
                                    surrogate_model=surrogate, index_offset=i)
        out.append(compute_soi(model, xb))
    return np.concatenate(out) if out else np.zeros(0)


def phase1_loss(logits: np.ndarray, y_true: np.ndarray, soi: np.ndarray,
                is_adv: np.ndarray, spec: nn.LossSpec) -> float:
    """beta*CE + (soi - lambda_target)^2, averaged over the batch.

    The target is ``lambda_adv`` where ``is_adv`` and ``lambda_clean``
    elsewhere.  Matches what ``nn.backward`` optimises for kind="phase1".
    """
    if spec.kind != "phase1":
        raise ConfigError("phase1_loss needs a phase1 LossSpec")
    y_true = np.asarray(y_true, dtype=np.int64)
    soi = np.asarray(soi, dtype=np.float64)
    is_adv = np.asarray(is_adv)
    m = logits - logits.max(axis=1, keepdims=True)
    ce = np.log(np.exp(m).sum(axis=1)) - m[np.arange(len(y_true)), y_true]
    lam = np.where(is_adv > 0.5, spec.lambda_adv, spec.lambda_clean)
    return float(np.mean(spec.beta * ce + (soi - lam) ** 2))


# ---------------------------------------------------------------------------
# training


_OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    """Plain cross-entropy training (used for pretraining and surrogates)."""
    epochs: int = 8
    lr: float = 3e-2
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("bad training config")
        if self.optimizer not in _OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Phase1Config:
    lambda_clean: float = 0.1
    lambda_adv: float = 0.6
    beta: float = 1e-6
    epochs: int = 50
    lr: float = 3e-2
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    attack: attacks.AttackSpec = field(
        default_factory=lambda: attacks.STRONG_PGD)

    def __post_init__(self):
        if not (self.lambda_adv > self.lambda_clean >= 0):
            raise ConfigError("need lambda_adv > lambda_clean >= 0")
        if not 0 < self.beta <= 1e-3:
            raise ConfigError("beta must lie in (0, 1e-3]")
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 2:
            raise ConfigError("bad phase1 training config")
        if self.optimizer not in _OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def loss_spec(self) -> nn.LossSpec:
        return nn.LossSpec("phase1", beta=self.beta,
                           lambda_clean=self.lambda_clean,
                           lambda_adv=self.lambda_adv)


@dataclass
class Phase2Config:
    epochs: int = 4
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    attack: attacks.AttackSpec = field(
        default_factory=lambda: attacks.WEAK_PGD)

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 2:
            raise ConfigError("bad phase2 training config")
        if self.optimizer not in _OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def _epoch_context(fn, epoch):
    try:
        return fn()
    except NumericError as e:
        raise NumericError(f"epoch {epoch}: {e}") from e


def _make_updater(model: nn.ModelGraph, cfg):
    """Parameter-update closure for cfg.optimizer (state kept internally)."""
    if cfg.optimizer == "sgd":
        return lambda m, grads: nn.sgd_step(m, grads, cfg.lr)
    state = nn.init_adam(model)
    return lambda m, grads: nn.adam_step(m, grads, state, cfg.lr)


def train_crossentropy(model: nn.ModelGraph, x, y, cfg: TrainConfig) -> nn.ModelGraph:
    """Seeded epochs over shuffled minibatches; returns the trained graph."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    cur = model
    update = _make_updater(model, cfg)
    for ep in range(cfg.epochs):
        perm = rng.permutation(len(x))
        for s in range(0, len(x), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            res = _epoch_context(
                lambda: nn.backward(cur, x[idx], y[idx]), ep)
            cur = update(cur, res.param_grads)
    return cur


def train_phase1(pretrained: nn.ModelGraph, x, y, cfg: Phase1Config) -> nn.ModelGraph:
    """Signature-shaping phase.

    Adversarial examples are generated once, with the configured strong
    attack against the pretrained model, then held fixed.  Every batch mixes
    clean and adversarial samples 1:1 and all layers train.
    """
    if cfg.epochs == 0:
        return pretrained.copy()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    x_adv = attacks.run_attack(pretrained, x, y, cfg.attack)
    rng = np.random.default_rng(cfg.seed)
    loss = cfg.loss_spec()
    half = cfg.batch_size // 2
    cur = pretrained
    update = _make_updater(pretrained, cfg)
    n = len(x)
    for ep in range(cfg.epochs):
        perm_c = rng.permutation(n)
        perm_a = rng.permutation(n)
        for s in range(0, n, half):
            ic, ia = perm_c[s:s + half], perm_a[s:s + half]
            xb = np.concatenate([x[ic], x_adv[ia]])
            yb = np.concatenate([y[ic], y[ia]])
            flags = np.concatenate([np.zeros(len(ic)), np.ones(len(ia))])
            res = _epoch_context(
                lambda: nn.backward(cur, xb, yb, loss, flags), ep)
            cur = update(cur, res.param_grads)
    return cur


def train_phase2(model: nn.ModelGraph, x, y, cfg: Phase2Config) -> nn.ModelGraph:
    """Accuracy-recovery phase with layer 0 frozen.

    Weak adversarial examples are regenerated from the current model for
    every batch; the loss is plain cross-entropy on the 1:1 mixed batch.
    Layer 0 of the returned model is bit-identical to the input's.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    cur = model.copy()
    cur.frozen = set(model.frozen) | {0}
    rng = np.random.default_rng(cfg.seed)
    half = cfg.batch_size // 2
    update = _make_updater(cur, cfg)
    n = len(x)
    for ep in range(cfg.epochs):
        perm = rng.permutation(n)
        for s in range(0, n, half):
            idx = perm[s:s + half]
            spec = replace(cfg.attack, seed=cfg.attack.seed + 7919 * ep)
            xb_adv = attacks.run_attack(cur, x[idx], y[idx], spec, index_offset=s)
            xb = np.concatenate([x[idx], xb_adv])
            yb = np.concatenate([y[idx], y[idx]])
            res = _epoch_context(lambda: nn.backward(cur, xb, yb), ep)
            cur = update(cur, res.param_grads)
    return cur

"""SoI statistic and dual-phase training behavior.

The direct-convolution oracle below recomputes the first-layer
pre-activations with explicit loops (no bias) and takes the mean absolute
value; compute_soi must agree to 1e-12 relative error.
"""

import numpy as np
import pytest

from soidetect import nn, soi, attacks
from soidetect.errors import ConfigError


def oracle_soi_conv(model, x):
    """Mean |z| of layer 0 via direct convolution, bias excluded."""
    layer = model.layers[0]
    w = model.params["layer0.W"]
    k, s, p = layer.kernel, layer.stride, layer.pad
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    b, c_in, hp, wp = xp.shape
    ho = (hp - k) // s + 1
    wo = (wp - k) // s + 1
    out = np.zeros(b)
    for n in range(b):
        acc = 0.0
        for o in range(layer.out_channels):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * s:i * s + k, j * s:j * s + k]
                    acc += abs(np.sum(patch * w[o]))
        out[n] = acc / (layer.out_channels * ho * wo)
    return out


def test_soi_matches_direct_conv_oracle():
    rng = np.random.default_rng(3)
    model = nn.build_model([nn.Conv2d(5, 3, stride=2, pad=1), nn.Relu(),
                            nn.Flatten(), nn.Dense(3)], (2, 9, 8), seed=5)
    model.params["layer0.b"] = rng.normal(size=5)   # must not affect the SoI
    x = rng.uniform(size=(4, 2, 9, 8))
    got = soi.compute_soi(model, x)
    ref = oracle_soi_conv(model, x)
    assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-12


def test_soi_dense_zero_row():
    model = nn.build_model([nn.Dense(1)], (2,), seed=0)
    model.params["layer0.W"] = np.array([[1.0, -1.0]])
    model.params["layer0.b"] = np.array([3.0])      # bias excluded
    assert soi.compute_soi(model, np.array([1.0, 1.0])) == 0.0


def test_soi_homogeneity_in_first_layer_weights():
    rng = np.random.default_rng(8)
    model = nn.build_model([nn.Conv2d(4, 3, pad=1), nn.Relu(), nn.Flatten(),
                            nn.Dense(2)], (1, 7, 7), seed=2)
    x = rng.uniform(size=(3, 1, 7, 7))
    base = soi.compute_soi(model, x)
    c = 3.7
    scaled = model.copy()
    scaled.params["layer0.W"] = scaled.params["layer0.W"] * c
    got = soi.compute_soi(scaled, x)
    assert np.max(np.abs(got - c * base) / (c * base)) < 1e-12


def test_soi_single_sample_and_batch_agree(tiny_model, tiny_splits):
    x = tiny_splits.test_x[:5]
    batch = soi.compute_soi(tiny_model, x)
    singles = np.array([soi.compute_soi(tiny_model, xi) for xi in x])
    assert np.array_equal(batch, singles)
    assert isinstance(soi.compute_soi(tiny_model, x[0]), float)


def test_soi_distribution_requires_labels_for_attacks(tiny_model, tiny_splits):
    with pytest.raises(ConfigError):
        soi.soi_distribution(tiny_model, tiny_splits.test_x[:4],
                             attack=attacks.MODERATE_PGD)


def test_soi_distribution_batch_split_invariance(tiny_model, tiny_splits):
    x, y = tiny_splits.test_x[:40], tiny_splits.test_y[:40]
    spec = attacks.AttackSpec("pgd", eps=8 / 255, alpha=4 / 255, n=3, seed=2)
    a = soi.soi_distribution(tiny_model, x, y, attack=spec, batch_size=40)
    b = soi.soi_distribution(tiny_model, x, y, attack=spec, batch_size=7)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# phase1 loss


def test_phase1_loss_zero_at_targets():
    spec = nn.LossSpec("phase1", beta=0.0, lambda_clean=0.1, lambda_adv=0.6)
    logits = np.array([[5.0, 0.0]])
    assert soi.phase1_loss(logits, [0], [0.6], [1], spec) == 0.0
    assert soi.phase1_loss(logits, [0], [0.1], [0], spec) == 0.0


def test_phase1_loss_quadratic_pull():
    spec = nn.LossSpec("phase1", beta=0.0, lambda_clean=0.1, lambda_adv=0.6)
    logits = np.zeros((1, 2))
    val = soi.phase1_loss(logits, [0], [0.3], [0], spec)
    assert val == pytest.approx((0.3 - 0.1) ** 2)
    # moving the SoI toward the target reduces the loss
    closer = soi.phase1_loss(logits, [0], [0.15], [0], spec)
    assert closer < val


def test_phase1_loss_beta_weights_ce():
    spec = nn.LossSpec("phase1", beta=1e-2, lambda_clean=0.1, lambda_adv=0.6)
    logits = np.array([[0.0, 0.0]])
    val = soi.phase1_loss(logits, [0], [0.1], [0], spec)
    assert val == pytest.approx(1e-2 * np.log(2.0))


def test_phase1_loss_matches_backward(tiny_splits):
    model = nn.build_model([nn.Conv2d(3, 3, pad=1), nn.Relu(), nn.Flatten(),
                            nn.Dense(4)], (1, 12, 12), seed=1)
    x = tiny_splits.train_x[:6]
    y = tiny_splits.train_y[:6]
    flags = np.array([0, 1, 0, 1, 0, 1])
    spec = nn.LossSpec("phase1", beta=1e-4, lambda_clean=0.1, lambda_adv=0.6)
    res = nn.backward(model, x, y, spec, flags)
    logits, _ = nn.forward(model, x)
    svals = soi.compute_soi(model, x)
    assert res.loss == pytest.approx(
        soi.phase1_loss(logits, y, svals, flags, spec), rel=1e-12)


# ---------------------------------------------------------------------------
# training phases


def test_train_phase1_zero_epochs_identity(tiny_model, tiny_splits):
    cfg = soi.Phase1Config(epochs=0, seed=0)
    out = soi.train_phase1(tiny_model, tiny_splits.train_x,
                           tiny_splits.train_y, cfg)
    for k in tiny_model.params:
        assert np.array_equal(out.params[k], tiny_model.params[k])


def test_train_phase1_moves_sois_toward_targets(tiny_model, tiny_splits):
    x, y = tiny_splits.train_x, tiny_splits.train_y
    cfg = soi.Phase1Config(epochs=10, lr=1e-2, batch_size=32, seed=0,
                           attack=attacks.AttackSpec("pgd", eps=16 / 255,
                                                     alpha=8 / 255, n=5, seed=1))
    adv = attacks.pgd(tiny_model, x, y, cfg.attack)
    gap_before = (np.mean(soi.compute_soi(tiny_model, adv))
                  - np.mean(soi.compute_soi(tiny_model, x)))
    trained = soi.train_phase1(tiny_model, x, y, cfg)
    gap_after = (np.mean(soi.compute_soi(trained, adv))
                 - np.mean(soi.compute_soi(trained, x)))
    assert gap_after > gap_before
    # the adversarial mean closes in on its target; the clean mean is pinned
    # only loosely (it shares every weight with the adversarial pull)
    d_adv = abs(np.mean(soi.compute_soi(trained, adv)) - cfg.lambda_adv)
    d0_adv = abs(np.mean(soi.compute_soi(tiny_model, adv)) - cfg.lambda_adv)
    assert d_adv < d0_adv
    assert abs(np.mean(soi.compute_soi(trained, x)) - cfg.lambda_clean) < 0.3


def test_train_phase2_freezes_layer0(tiny_model, tiny_splits):
    cfg = soi.Phase2Config(epochs=1, lr=1e-3, batch_size=32, seed=0,
                           attack=attacks.AttackSpec("pgd", eps=4 / 255,
                                                     alpha=2 / 255, n=2, seed=2))
    out = soi.train_phase2(tiny_model, tiny_splits.train_x,
                           tiny_splits.train_y, cfg)
    assert np.array_equal(out.params["layer0.W"], tiny_model.params["layer0.W"])
    assert np.array_equal(out.params["layer0.b"], tiny_model.params["layer0.b"])
    assert 0 in out.frozen
    # later layers did change
    assert not np.array_equal(out.params["layer3.W"], tiny_model.params["layer3.W"])


def test_phase_config_validation():
    with pytest.raises(ConfigError):
        soi.Phase1Config(lambda_clean=0.6, lambda_adv=0.1)
    with pytest.raises(ConfigError):
        soi.Phase1Config(beta=0.0)
    with pytest.raises(ConfigError):
        soi.Phase1Config(beta=2e-3)
    with pytest.raises(ConfigError):
        soi.Phase2Config(lr=0.0)

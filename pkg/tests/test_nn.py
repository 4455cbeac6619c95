"""Engine tests: forward semantics, gradient checks, SGD, quantization, checkpoints.

Gradients are verified against central finite differences (h=1e-4) computed
directly on the loss; the differencing code below is the oracle and shares no
code with the backward pass.
"""

import numpy as np
import pytest

from soidetect import nn
from soidetect.errors import ConfigError, NumericError


# ---------------------------------------------------------------------------
# oracle: central finite differences on the loss


def fd_param_grads(model, x, y, loss, is_adv=None, h=1e-4):
    grads = {}
    for name, p in model.params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = nn.backward(model, x, y, loss, is_adv).loss
            flat[j] = orig - h
            lm = nn.backward(model, x, y, loss, is_adv).loss
            flat[j] = orig
            gflat[j] = (lp - lm) / (2 * h)
        grads[name] = g
    return grads


def fd_input_grad(model, x, y, loss, is_adv=None, h=1e-4):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        lp = nn.backward(model, x, y, loss, is_adv).loss
        flat[j] = orig - h
        lm = nn.backward(model, x, y, loss, is_adv).loss
        flat[j] = orig
        gflat[j] = (lp - lm) / (2 * h)
    return g


def max_rel_err(a, n):
    num = np.abs(a - n)
    den = np.maximum(np.abs(a), np.abs(n))
    out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    # absolute agreement at tiny magnitudes counts as a match
    out = np.where(num < 1e-9, 0.0, out)
    return float(out.max()) if out.size else 0.0


# ---------------------------------------------------------------------------
# forward semantics


def test_dense_identity_passthrough():
    m = nn.build_model([nn.Dense(3)], input_shape=(3,), seed=0)
    m.params["layer0.W"] = np.eye(3)
    m.params["layer0.b"] = np.zeros(3)
    logits, z0 = nn.forward(m, np.array([[1.0, 2.0, 3.0]]))
    assert np.array_equal(logits, [[1.0, 2.0, 3.0]])
    assert np.array_equal(z0, [[1.0, 2.0, 3.0]])


def test_conv_1x1_doubling():
    m = nn.build_model([nn.Conv2d(1, kernel=1)], input_shape=(1, 3, 3), seed=0)
    m.params["layer0.W"] = np.full((1, 1, 1, 1), 2.0)
    m.params["layer0.b"] = np.zeros(1)
    logits, z0 = nn.forward(m, np.ones((1, 1, 3, 3)))
    assert np.array_equal(z0, np.full((1, 1, 3, 3), 2.0))


def test_conv_against_direct_convolution():
    # independent direct conv with explicit loops
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 7, 6))
    m = nn.build_model([nn.Conv2d(4, kernel=3, stride=2, pad=1)],
                       input_shape=(3, 7, 6), seed=1)
    w, b = m.params["layer0.W"], m.params["layer0.b"]
    logits, z0 = nn.forward(m, x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho = (7 + 2 - 3) // 2 + 1
    wo = (6 + 2 - 3) // 2 + 1
    ref = np.zeros((2, 4, ho, wo))
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * 2:i * 2 + 3, j * 2:j * 2 + 3]
                    ref[n, o, i, j] = np.sum(patch * w[o])
    assert np.max(np.abs(z0 - ref)) < 1e-12
    assert np.max(np.abs(logits - (ref + b[None, :, None, None]))) < 1e-12


def test_forward_shape_mismatch_is_config_error():
    m = nn.build_model([nn.Dense(2)], input_shape=(3,), seed=0)
    with pytest.raises(ConfigError):
        nn.forward(m, np.zeros((1, 4)))


def test_forward_rejects_nonfinite():
    m = nn.build_model([nn.Dense(2)], input_shape=(3,), seed=0)
    with pytest.raises(NumericError):
        nn.forward(m, np.array([[1.0, np.nan, 0.0]]))


def test_forward_deterministic():
    m = nn.build_model([nn.Conv2d(4, 3, pad=1), nn.Relu(), nn.Flatten(), nn.Dense(5)],
                       input_shape=(2, 6, 6), seed=3)
    x = np.random.default_rng(0).uniform(size=(4, 2, 6, 6))
    a1, z1 = nn.forward(m, x)
    a2, z2 = nn.forward(m, x)
    assert np.array_equal(a1, a2) and np.array_equal(z1, z2)


# ---------------------------------------------------------------------------
# backward


def test_backward_matches_analytic_1param():
    # f(w) = w*x with squared signature loss (beta=0): L=(|wx|-t)^2,
    # dL/dw = 2(wx-t)*x for wx>0
    m = nn.build_model([nn.Dense(1)], input_shape=(1,), seed=0)
    m.params["layer0.W"] = np.array([[1.5]])
    m.params["layer0.b"] = np.zeros(1)
    x = np.array([[2.0]])
    t = 0.4
    loss = nn.LossSpec(kind="phase1", beta=0.0, lambda_clean=t, lambda_adv=t + 1)
    res = nn.backward(m, x, np.array([0]), loss, is_adv=np.array([0]))
    wx = 1.5 * 2.0
    assert res.loss == pytest.approx((wx - t) ** 2, abs=0, rel=0)
    assert res.param_grads["layer0.W"][0, 0] == pytest.approx(2 * (wx - t) * 2.0)


def test_input_grad_zero_when_loss_constant_in_x():
    m = nn.build_model([nn.Dense(3)], input_shape=(4,), seed=0)
    m.params["layer0.W"] = np.zeros((3, 4))
    res = nn.backward(m, np.random.default_rng(1).normal(size=(5, 4)),
                      np.array([0, 1, 2, 0, 1]))
    assert np.array_equal(res.input_grad, np.zeros((5, 4)))


def _random_small_model(rng):
    arch = rng.integers(0, 3)
    if arch == 0:
        layers = [nn.Dense(5), nn.Relu(), nn.Dense(3)]
        shape = (4,)
    elif arch == 1:
        layers = [nn.Conv2d(3, 3, pad=1), nn.Relu(), nn.Flatten(), nn.Dense(3)]
        shape = (1, 5, 5)
    else:
        layers = [nn.Conv2d(2, 3, stride=2, pad=1), nn.Relu(),
                  nn.Conv2d(3, 3, pad=1), nn.Relu(), nn.Flatten(), nn.Dense(4)]
        shape = (2, 6, 6)
    return nn.build_model(layers, shape, seed=int(rng.integers(0, 2 ** 31))), shape


@pytest.mark.parametrize("seed", range(6))
def test_gradcheck_cross_entropy(seed):
    rng = np.random.default_rng(100 + seed)
    model, shape = _random_small_model(rng)
    x = rng.uniform(0.0, 1.0, size=(3,) + shape)
    n_cls = model.params[sorted(model.params)[-1]].shape[0]
    y = rng.integers(0, n_cls, size=3)
    loss = nn.LossSpec("cross_entropy")
    res = nn.backward(model, x, y, loss)
    fd = fd_param_grads(model, x, y, loss)
    for name in res.param_grads:
        assert max_rel_err(res.param_grads[name], fd[name]) < 1e-4, name
    fdx = fd_input_grad(model, x, y, loss)
    assert max_rel_err(res.input_grad, fdx) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_phase1_loss(seed):
    rng = np.random.default_rng(200 + seed)
    model, shape = _random_small_model(rng)
    x = rng.uniform(0.0, 1.0, size=(4,) + shape)
    n_cls = model.params[sorted(model.params)[-1]].shape[0]
    y = rng.integers(0, n_cls, size=4)
    is_adv = rng.integers(0, 2, size=4)
    loss = nn.LossSpec("phase1", beta=1e-3, lambda_clean=0.1, lambda_adv=0.6)
    res = nn.backward(model, x, y, loss, is_adv)
    fd = fd_param_grads(model, x, y, loss, is_adv)
    for name in res.param_grads:
        assert max_rel_err(res.param_grads[name], fd[name]) < 1e-4, name
    fdx = fd_input_grad(model, x, y, loss, is_adv)
    assert max_rel_err(res.input_grad, fdx) < 1e-4


def test_frozen_layers_absent_from_grads_but_pass_gradient():
    m = nn.build_model([nn.Dense(4), nn.Relu(), nn.Dense(2)], (3,), seed=5,
                       frozen={0})
    x = np.random.default_rng(2).uniform(size=(2, 3))
    res = nn.backward(m, x, np.array([0, 1]))
    assert "layer0.W" not in res.param_grads
    assert "layer2.W" in res.param_grads
    assert np.any(res.input_grad != 0)


# ---------------------------------------------------------------------------
# sgd


def test_sgd_basic_update_and_frozen():
    m = nn.build_model([nn.Dense(2), nn.Relu(), nn.Dense(2)], (2,), seed=0,
                       frozen={2})
    g = {"layer0.W": np.ones((2, 2)), "layer2.W": np.ones((2, 2))}
    before0 = m.params["layer0.W"].copy()
    before2 = m.params["layer2.W"]
    m2 = nn.sgd_step(m, g, lr=0.5)
    assert np.array_equal(m2.params["layer0.W"], before0 - 0.5)
    assert m2.params["layer2.W"] is before2          # frozen: untouched object
    assert np.array_equal(m.params["layer0.W"], before0)   # input not mutated


def test_sgd_zero_lr_noop_and_negative_rejected():
    m = nn.build_model([nn.Dense(2)], (2,), seed=1)
    g = {"layer0.W": np.ones((2, 2)), "layer0.b": np.ones(2)}
    m2 = nn.sgd_step(m, g, lr=0.0)
    for k in m.params:
        assert np.array_equal(m.params[k], m2.params[k])
    with pytest.raises(ConfigError):
        nn.sgd_step(m, g, lr=-1e-3)


def test_sgd_shape_mismatch():
    m = nn.build_model([nn.Dense(2)], (2,), seed=1)
    with pytest.raises(ConfigError):
        nn.sgd_step(m, {"layer0.W": np.ones(3)}, lr=0.1)


def test_adam_first_step_and_frozen():
    m = nn.build_model([nn.Dense(2), nn.Relu(), nn.Dense(2)], (2,), seed=0,
                       frozen={2})
    g = {"layer0.W": np.full((2, 2), 3.0), "layer2.W": np.ones((2, 2))}
    before0 = m.params["layer0.W"].copy()
    before2 = m.params["layer2.W"]
    st = nn.init_adam(m)
    m2 = nn.adam_step(m, g, st, lr=0.1)
    # after bias correction the first step is lr * g/|g| (eps-perturbed)
    expect = before0 - 0.1 * 3.0 / (3.0 + 1e-8)
    assert np.allclose(m2.params["layer0.W"], expect, atol=1e-9)
    assert m2.params["layer2.W"] is before2
    assert st.step == 1
    with pytest.raises(ConfigError):
        nn.adam_step(m, g, st, lr=-1.0)


def test_adam_flat_direction_outpaces_sgd():
    # per-coordinate normalisation moves a tiny-gradient coordinate at the
    # same speed as a large-gradient one; sgd does not
    m = nn.build_model([nn.Dense(2)], (2,), seed=3)
    g = {"layer0.W": np.array([[1.0, 1e-6], [1.0, 1e-6]]), "layer0.b": np.zeros(2)}
    st = nn.init_adam(m)
    adam1 = nn.adam_step(m, g, st, lr=0.01)
    d = np.abs(adam1.params["layer0.W"] - m.params["layer0.W"])
    assert d[0, 1] > 0.009 and d[0, 0] > 0.009
    sgd1 = nn.sgd_step(m, g, lr=0.01)
    dsgd = np.abs(sgd1.params["layer0.W"] - m.params["layer0.W"])
    assert dsgd[0, 1] < 1e-7


# ---------------------------------------------------------------------------
# quantization


def test_quantize_2bit_worked_values():
    t = np.array([-1.0, -0.4, 0.4, 1.0])
    q = nn.quantize(t, 2)
    assert np.allclose(q, [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0], atol=1e-15)


def test_quantize_8bit_error_bound():
    rng = np.random.default_rng(11)
    t = rng.normal(size=1000)
    q = nn.quantize(t, 8)
    a = np.max(np.abs(t))
    assert np.max(np.abs(t - q)) <= a / (2 ** 8 - 1) + 1e-15


def test_quantize_idempotent():
    rng = np.random.default_rng(12)
    t = rng.normal(size=257)
    for bits in (2, 4, 8, 12):
        q = nn.quantize(t, bits)
        assert np.array_equal(nn.quantize(q, bits), q)


def test_quantize_zero_tensor_and_bad_bits():
    z = np.zeros(5)
    assert np.array_equal(nn.quantize(z, 8), z)
    for bits in (1, 17, 0):
        with pytest.raises(ConfigError):
            nn.quantize(np.ones(3), bits)


def test_quantized_forward_uses_quantized_weights():
    m = nn.build_model([nn.Dense(2)], (2,), seed=3, quant_bits=2)
    m.params["layer0.W"] = np.array([[1.0, -0.4], [0.4, -1.0]])
    m.params["layer0.b"] = np.zeros(2)
    x = np.array([[1.0, 0.0]])
    logits, _ = nn.forward(m, x)
    # weights snap to [[1,-1/3],[1/3,-1]]; the input snaps to [1, 1/3] (the
    # 2-bit grid has no zero level and the tie rounds half-even to +1/3), so
    # logits = [1 - 1/9, 1/3 - 1/3]
    assert np.allclose(logits, [[8.0 / 9.0, 0.0]], atol=1e-15)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = nn.build_model([nn.Conv2d(3, 3, pad=1), nn.Relu(), nn.Flatten(), nn.Dense(4)],
                       (1, 6, 6), seed=9, quant_bits=8, frozen={0})
    p = str(tmp_path / "ckpt")
    nn.save_checkpoint(m, p, extra_meta={"stage": "test"})
    m2, meta = nn.load_checkpoint(p)
    assert meta["stage"] == "test"
    assert m2.frozen == {0} and m2.quant_bits == 8
    assert [l.kind for l in m2.layers] == [l.kind for l in m.layers]
    for k in m.params:
        assert m.params[k].dtype == np.float64
        assert np.array_equal(m.params[k], m2.params[k])
    # saving the loaded model reproduces identical bytes
    p2 = str(tmp_path / "ckpt2")
    nn.save_checkpoint(m2, p2, extra_meta={"stage": "test"})
    assert (tmp_path / "ckpt.bin").read_bytes() == (tmp_path / "ckpt2.bin").read_bytes()


def test_checkpoint_truncation_detected(tmp_path):
    m = nn.build_model([nn.Dense(4)], (3,), seed=0)
    p = str(tmp_path / "c")
    nn.save_checkpoint(m, p)
    blob = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(blob[:-8])
    from soidetect.errors import DataFormatError
    with pytest.raises(DataFormatError):
        nn.load_checkpoint(p)

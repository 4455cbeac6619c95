"""Minimal dense/conv network with explicit backprop, in double precision numpy.

The networks here are small image classifiers: a stack of conv2d / relu /
flatten / dense layers followed by a softmax cross-entropy head.  Everything
is kept deliberately explicit so that the first layer's pre-activations (the
quantity the detector integrates over) are available to callers, and so that
extra gradient terms can be injected at that point during the signature
training phase.

Conventions
-----------
* Activations are float64 arrays shaped (B, C, H, W) for images or (B, D)
  for flat vectors.
* Parameters live in ``ModelGraph.params`` under names ``layer{i}.W`` /
  ``layer{i}.b``.
* ``forward`` returns the logits together with the bias-free pre-activation
  of layer 0; ``backward`` returns parameter gradients (skipping frozen
  layers) and the gradient with respect to the input.
* Layers listed in ``ModelGraph.frozen`` never receive parameter updates,
  but gradients still flow through them to earlier layers and to the input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError, DataFormatError

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# layer descriptors


@dataclass(frozen=True)
class Conv2d:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    kind: str = field(default="conv2d", init=False)


@dataclass(frozen=True)
class Dense:
    out_features: int
    kind: str = field(default="dense", init=False)


@dataclass(frozen=True)
class Relu:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class Flatten:
    kind: str = field(default="flatten", init=False)


LayerSpec = Conv2d | Dense | Relu | Flatten

_LAYER_KINDS = {"conv2d": Conv2d, "dense": Dense, "relu": Relu, "flatten": Flatten}


def layer_to_dict(layer: LayerSpec) -> dict:
    d = asdict(layer)
    d["kind"] = layer.kind
    return d


def layer_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _LAYER_KINDS:
        raise ConfigError(f"unknown layer kind: {kind!r}")
    return _LAYER_KINDS[kind](**d)


# ---------------------------------------------------------------------------
# model graph


@dataclass
class ModelGraph:
    layers: list
    input_shape: tuple
    params: dict
    frozen: set = field(default_factory=set)
    quant_bits: int = 0

    def copy(self) -> "ModelGraph":
        return ModelGraph(
            layers=list(self.layers),
            input_shape=tuple(self.input_shape),
            params={k: v.copy() for k, v in self.params.items()},
            frozen=set(self.frozen),
            quant_bits=self.quant_bits,
        )

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _propagate_shape(layers, input_shape):
    """Yield (layer_index, layer, in_shape, out_shape); validates compatibility."""
    shape = tuple(int(s) for s in input_shape)
    out = []
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv2d):
            if len(shape) != 3:
                raise ConfigError(f"layer {i}: conv2d needs (C,H,W) input, got {shape}")
            c, h, w = shape
            k, s, p = layer.kernel, layer.stride, layer.pad
            if k < 1 or s < 1 or p < 0:
                raise ConfigError(f"layer {i}: bad conv2d geometry k={k} s={s} p={p}")
            ho = (h + 2 * p - k) // s + 1
            wo = (w + 2 * p - k) // s + 1
            if ho < 1 or wo < 1:
                raise ConfigError(f"layer {i}: conv2d output collapses to {ho}x{wo}")
            new = (layer.out_channels, ho, wo)
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise ConfigError(f"layer {i}: dense needs flat input, got {shape}")
            new = (layer.out_features,)
        elif isinstance(layer, Relu):
            new = shape
        elif isinstance(layer, Flatten):
            new = (int(np.prod(shape)),)
        else:
            raise ConfigError(f"layer {i}: unsupported layer {layer!r}")
        out.append((i, layer, shape, new))
        shape = new
    return out


def build_model(layers, input_shape, seed=0, quant_bits=0, frozen=()):
    """He-initialised ModelGraph; layer 0 must be conv2d or dense."""
    if not layers:
        raise ConfigError("model needs at least one layer")
    if not isinstance(layers[0], (Conv2d, Dense)):
        raise ConfigError("layer 0 must be conv2d or dense (it feeds the signature)")
    if quant_bits and not (2 <= quant_bits <= 16):
        raise ConfigError(f"quant_bits must be 0 or in [2,16], got {quant_bits}")
    rng = np.random.default_rng(seed)
    params = {}
    for i, layer, in_shape, _ in _propagate_shape(layers, input_shape):
        if isinstance(layer, Conv2d):
            c_in = in_shape[0]
            fan_in = c_in * layer.kernel * layer.kernel
            params[f"layer{i}.W"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in),
                size=(layer.out_channels, c_in, layer.kernel, layer.kernel))
            params[f"layer{i}.b"] = np.zeros(layer.out_channels)
        elif isinstance(layer, Dense):
            fan_in = in_shape[0]
            params[f"layer{i}.W"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(layer.out_features, fan_in))
            params[f"layer{i}.b"] = np.zeros(layer.out_features)
    return ModelGraph(layers=list(layers), input_shape=tuple(input_shape),
                      params=params, frozen=set(frozen), quant_bits=quant_bits)


def output_shapes(model: ModelGraph) -> list:
    return [out for _, _, _, out in _propagate_shape(model.layers, model.input_shape)]


# ---------------------------------------------------------------------------
# quantization

def quantize(t: np.ndarray, bits: int) -> np.ndarray:
    """Symmetric uniform quantization of ``t`` onto a 2**bits point grid.

    The grid spans [-max|t|, +max|t|] with step 2*max|t|/(2**bits - 1), so the
    rounding error never exceeds max|t|/(2**bits - 1).  Idempotent; an all-zero
    tensor is returned unchanged.
    """
    if not 2 <= bits <= 16:
        raise ConfigError(f"quantization bits must lie in [2,16], got {bits}")
    t = np.asarray(t, dtype=np.float64)
    a = float(np.max(np.abs(t))) if t.size else 0.0
    if not np.isfinite(a):
        raise NumericError("cannot quantize a tensor with non-finite entries")
    if a == 0.0:
        return t.copy()
    levels = (1 << bits) - 1
    step = 2.0 * a / levels
    k = np.clip(np.rint((t + a) / step), 0, levels)
    return (2.0 * k - levels) * (a / levels)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class LossSpec:
    """Loss head description.

    kind = "cross_entropy": plain softmax cross-entropy.
    kind = "phase1": beta * CE + (soi - lambda_target)**2 per sample, where the
    target is lambda_adv for adversarial samples and lambda_clean otherwise and
    soi is the mean |pre-activation| of layer 0 (bias excluded).
    """
    kind: str = "cross_entropy"
    beta: float = 1e-6
    lambda_clean: float = 0.1
    lambda_adv: float = 0.6

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "phase1"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == "phase1":
            if self.beta < 0:
                raise ConfigError("beta must be >= 0")
            if not (self.lambda_adv > self.lambda_clean >= 0):
                raise ConfigError("need lambda_adv > lambda_clean >= 0")


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {where}")


def _im2col(xp, k, stride, h_out, w_out):
    # xp: padded input (B, C, Hp, Wp) -> (B, h_out*w_out, C*k*k)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]           # (B, C, h_out, w_out, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(xp.shape[0], h_out * w_out, -1)
    return np.ascontiguousarray(cols)


def _forward_tape(model: ModelGraph, x: np.ndarray):
    """Run the network, recording what backward needs.

    Returns (logits, layer0_preact_nobias, tape).  Quantization (if enabled on
    the model) is applied to each layer's weight tensor and incoming
    activation; gradients later pass through the quantizers unchanged
    (straight-through), which is the usual treatment for fixed-point training.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != model.input_shape:
        raise ConfigError(
            f"input shape {x.shape[1:]} does not match model input {model.input_shape}")
    _check_finite(x, "input")
    qb = model.quant_bits
    act = quantize(x, qb) if qb else x
    tape = []
    z0_nobias = None
    shapes = _propagate_shape(model.layers, model.input_shape)
    for i, layer, in_shape, out_shape in shapes:
        rec = {"layer": layer, "index": i}
        if isinstance(layer, Conv2d):
            w = model.params[f"layer{i}.W"]
            bvec = model.params[f"layer{i}.b"]
            if qb:
                w = quantize(w, qb)
            k, s, p = layer.kernel, layer.stride, layer.pad
            _, ho, wo = out_shape
            xp = np.pad(act, ((0, 0), (0, 0), (p, p), (p, p))) if p else act
            cols = _im2col(xp, k, s, ho, wo)
            znb = cols @ w.reshape(layer.out_channels, -1).T      # (B, P, C_out)
            z = znb + bvec
            rec.update(cols=cols, w=w, x_shape=act.shape, h_out=ho, w_out=wo)
            out = z.transpose(0, 2, 1).reshape(act.shape[0], layer.out_channels, ho, wo)
            if i == 0:
                z0_nobias = znb.transpose(0, 2, 1).reshape(out.shape)
        elif isinstance(layer, Dense):
            w = model.params[f"layer{i}.W"]
            bvec = model.params[f"layer{i}.b"]
            if qb:
                w = quantize(w, qb)
            znb = act @ w.T
            out = znb + bvec
            rec.update(x=act, w=w)
            if i == 0:
                z0_nobias = znb
        elif isinstance(layer, Relu):
            out = np.maximum(act, 0.0)
            rec.update(mask=act > 0.0)
        elif isinstance(layer, Flatten):
            rec.update(in_shape=act.shape)
            out = act.reshape(act.shape[0], -1)
        _check_finite(out, f"layer {i} output")
        tape.append(rec)
        act = quantize(out, qb) if (qb and i < len(model.layers) - 1) else out
    return act, z0_nobias, tape


def forward(model: ModelGraph, x: np.ndarray):
    """Logits and the bias-free pre-activation of layer 0, as a pair."""
    logits, z0, _ = _forward_tape(model, x)
    return logits, z0


def _softmax(logits):
    m = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean softmax cross-entropy (natural log)."""
    m = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(m).sum(axis=1))
    return float(np.mean(lse - m[np.arange(len(y)), y]))


@dataclass
class BackwardResult:
    loss: float
    param_grads: dict
    input_grad: np.ndarray


def backward(model: ModelGraph, x: np.ndarray, y: np.ndarray,
             loss: Optional[LossSpec] = None,
             is_adv: Optional[np.ndarray] = None) -> BackwardResult:
    """Loss value, parameter gradients and input gradient for a batch.

    ``is_adv`` (0/1 per sample) selects the per-sample signature target when
    ``loss.kind == "phase1"`` and is ignored otherwise.  Frozen layers are
    absent from ``param_grads``; gradients still flow through them.
    """
    loss = loss or LossSpec()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise ConfigError(f"labels shaped {y.shape} for batch of {x.shape[0]}")
    logits, z0, tape = _forward_tape(model, x)
    b = x.shape[0]
    probs = _softmax(logits)
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), y] = 1.0
    ce = cross_entropy(logits, y)

    dz0_extra = None
    if loss.kind == "cross_entropy":
        total = ce
        dlogits = (probs - onehot) / b
    else:
        if is_adv is None:
            raise ConfigError("phase1 loss needs per-sample is_adv flags")
        is_adv = np.asarray(is_adv, dtype=np.float64).reshape(b)
        e = int(np.prod(z0.shape[1:]))
        soi = np.abs(z0).reshape(b, -1).mean(axis=1)
        lam = np.where(is_adv > 0.5, loss.lambda_adv, loss.lambda_clean)
        ce_each = -np.log(np.clip(probs[np.arange(b), y], 1e-300, None))
        per_sample = loss.beta * ce_each + (soi - lam) ** 2
        total = float(per_sample.mean())
        dlogits = loss.beta * (probs - onehot) / b
        dsoi = 2.0 * (soi - lam) / b                      # d total / d soi_i
        dz0_extra = (dsoi / e)[:, None] * np.sign(z0).reshape(b, -1)
        dz0_extra = dz0_extra.reshape(z0.shape)
    if not np.isfinite(total):
        raise NumericError("loss became non-finite")

    grads = {}
    dact = dlogits
    for rec in reversed(tape):
        layer, i = rec["layer"], rec["index"]
        if isinstance(layer, Conv2d):
            bsz, c_out = dact.shape[0], layer.out_channels
            ho, wo = rec["h_out"], rec["w_out"]
            dz = dact.reshape(bsz, c_out, ho * wo).transpose(0, 2, 1)   # (B,P,C_out)
            db = dz.sum(axis=(0, 1))
            if i == 0 and dz0_extra is not None:
                # the signature term reads the bias-free pre-activation, so it
                # contributes to dW and dx but not to db
                dz = dz + dz0_extra.reshape(bsz, c_out, ho * wo).transpose(0, 2, 1)
            if i not in model.frozen:
                dw = np.einsum("bpo,bpc->oc", dz, rec["cols"])
                grads[f"layer{i}.W"] = dw.reshape(rec["w"].shape)
                grads[f"layer{i}.b"] = db
            dcols = dz @ rec["w"].reshape(c_out, -1)
            k, s, p = layer.kernel, layer.stride, layer.pad
            bq, cq, hq, wq = rec["x_shape"]
            dxp = np.zeros((bq, cq, hq + 2 * p, wq + 2 * p))
            d = dcols.reshape(bq, ho, wo, cq, k, k).transpose(0, 3, 1, 2, 4, 5)
            for ki in range(k):
                for kj in range(k):
                    dxp[:, :, ki:ki + ho * s:s, kj:kj + wo * s:s] += d[:, :, :, :, ki, kj]
            dact = dxp[:, :, p:p + hq, p:p + wq] if p else dxp
        elif isinstance(layer, Dense):
            dz = dact
            db = dz.sum(axis=0)
            if i == 0 and dz0_extra is not None:
                dz = dz + dz0_extra
            if i not in model.frozen:
                grads[f"layer{i}.W"] = dz.T @ rec["x"]
                grads[f"layer{i}.b"] = db
            dact = dz @ rec["w"]
        elif isinstance(layer, Relu):
            dact = dact * rec["mask"]
        elif isinstance(layer, Flatten):
            dact = dact.reshape(rec["in_shape"])
        _check_finite(dact, f"gradient through layer {i}")
    return BackwardResult(loss=total, param_grads=grads, input_grad=dact)


def sgd_step(model: ModelGraph, grads: dict, lr: float) -> ModelGraph:
    """One SGD update p <- p - lr*g on unfrozen parameters; returns a new graph."""
    if lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    params = dict(model.params)
    for name, g in grads.items():
        idx = int(name.split(".")[0][len("layer"):])
        if idx in model.frozen:
            continue
        if name not in params:
            raise ConfigError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient shape {g.shape} != param shape {params[name].shape} for {name}")
        params[name] = params[name] - lr * g
        _check_finite(params[name], name)
    return ModelGraph(layers=list(model.layers), input_shape=model.input_shape,
                      params=params, frozen=set(model.frozen),
                      quant_bits=model.quant_bits)


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators; step counts updates."""
    m: dict
    v: dict
    step: int = 0


def init_adam(model: ModelGraph) -> AdamState:
    return AdamState(m={k: np.zeros_like(p) for k, p in model.params.items()},
                     v={k: np.zeros_like(p) for k, p in model.params.items()})


def adam_step(model: ModelGraph, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> ModelGraph:
    """One Adam update on unfrozen parameters; mutates state, returns a new graph.

    The signature-shaping loss has a nearly flat valley (first-order forces
    act only along existing filter directions), which plain SGD cannot leave
    at small step budgets; the per-coordinate normalisation here is what
    makes that escape affordable.
    """
    if lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    params = dict(model.params)
    for name, g in grads.items():
        idx = int(name.split(".")[0][len("layer"):])
        if idx in model.frozen:
            continue
        if name not in params:
            raise ConfigError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient shape {g.shape} != param shape {params[name].shape} for {name}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        params[name] = params[name] - lr * (state.m[name] / c1) / (
            np.sqrt(state.v[name] / c2) + eps)
        _check_finite(params[name], name)
    return ModelGraph(layers=list(model.layers), input_shape=model.input_shape,
                      params=params, frozen=set(model.frozen),
                      quant_bits=model.quant_bits)


def predict(model: ModelGraph, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per sample, evaluated in batches."""
    out = []
    for i in range(0, len(x), batch_size):
        logits, _ = forward(model, x[i:i + batch_size])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(model: ModelGraph, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(model, x) == np.asarray(y)))


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + flat little-endian float64 blob


def save_checkpoint(model: ModelGraph, path: str, extra_meta: Optional[dict] = None) -> None:
    """Write ``path``.json (manifest) and ``path``.bin (parameters).

    The blob concatenates each parameter as little-endian float64 in manifest
    order, so a load followed by a save is byte-identical.
    """
    names = sorted(model.params)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "layers": [layer_to_dict(l) for l in model.layers],
        "input_shape": list(model.input_shape),
        "quant_bits": model.quant_bits,
        "frozen": sorted(model.frozen),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "meta": extra_meta or {},
    }
    blob = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes()
                    for n in names)
    with open(path + ".json", "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")
    with open(path + ".bin", "wb") as f:
        f.write(blob)


def load_checkpoint(path: str) -> tuple:
    """Read a checkpoint pair; returns (ModelGraph, meta dict)."""
    try:
        with open(path + ".json") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}.json is not valid JSON: {e}") from e
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version in {path}.json")
    with open(path + ".bin", "rb") as f:
        blob = f.read()
    params = {}
    off = 0
    for ent in manifest["params"]:
        shape = tuple(ent["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        if off + nbytes > len(blob):
            raise DataFormatError(f"{path}.bin truncated at parameter {ent['name']}")
        params[ent["name"]] = np.frombuffer(
            blob[off:off + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        off += nbytes
    if off != len(blob):
        raise DataFormatError(f"{path}.bin has {len(blob) - off} trailing bytes")
    model = ModelGraph(
        layers=[layer_from_dict(d) for d in manifest["layers"]],
        input_shape=tuple(manifest["input_shape"]),
        params=params,
        frozen=set(manifest["frozen"]),
        quant_bits=manifest["quant_bits"],
    )
    return model, manifest.get("meta", {})

"""Behavioral model of the first layer replayed on memristive crossbar tiles.

Weight handling follows the usual digit-sliced differential scheme: each
8-bit weight magnitude is split into four 2-bit digits, each digit is stored
as one device conductance interpolated linearly between ``g_min`` and
``g_min * on_off_ratio``, and the weight's sign decides whether the digits
live on the positive or the negative column of the pair (the other side
stays at ``g_min``).  A conv layer with a KxK kernel occupies K*K tiles
(one per kernel position, input channels on rows, output channels on
columns); rows or columns beyond the tile size split into further tiles with
the partial sums accumulated digitally.

The analog part of a forward pass is just I = v . G per column; the
differential current is digitised by a mid-tread uniform ADC sized for the
tile's static worst case (all inputs at full scale, all devices at g_max on
one side), and digit/tile recombination happens digitally.  Because inputs
are 8-bit quantized and devices sit on discrete levels, a noiseless column
current can only take values on a fixed lattice; the digital side therefore
rounds each conversion to the nearest lattice point, which makes the
readout exact once the ADC step is finer than half the lattice pitch.
Device-to-device variation multiplies every conductance by exp(N(0,
sigma^2)) and clamps back into the conductance range.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigError

WEIGHT_BITS = 8

# variation presets: log-normal sigma per device technology
DEVICE_PRESETS = {"sram": 0.0, "rram": 0.1, "fefet": 0.15}


@dataclass(frozen=True)
class CrossbarConfig:
    rows: int = 128
    cols: int = 128
    device_bits: int = 2
    devices_per_weight: int = 4
    on_off_ratio: float = 10.0
    g_min: float = 1e-6            # siemens; absolute scale cancels in readout
    variation_sigma: float = 0.0
    mux_ratio: int = 8             # columns sharing one ADC
    adc_bits: int = 8
    device_preset: str | None = None

    def __post_init__(self):
        if self.device_preset is not None:
            if self.device_preset not in DEVICE_PRESETS:
                raise ConfigError(f"unknown device preset {self.device_preset!r}")
            object.__setattr__(self, "variation_sigma",
                               DEVICE_PRESETS[self.device_preset])
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("crossbar needs positive dimensions")
        if self.device_bits * self.devices_per_weight != WEIGHT_BITS:
            raise ConfigError(
                f"device_bits*devices_per_weight must equal {WEIGHT_BITS}")
        if self.on_off_ratio <= 1:
            raise ConfigError("on_off_ratio must exceed 1")
        if self.g_min <= 0:
            raise ConfigError("g_min must be positive")
        if self.variation_sigma < 0:
            raise ConfigError("variation_sigma must be non-negative")
        if self.mux_ratio < 1 or self.cols % self.mux_ratio:
            raise ConfigError("mux_ratio must divide the column count")
        if not 2 <= self.adc_bits <= 16:
            raise ConfigError("adc_bits must lie in [2,16]")

    @property
    def g_max(self) -> float:
        return self.g_min * self.on_off_ratio

    @property
    def digit_base(self) -> int:
        return 1 << self.device_bits

    @property
    def delta_g(self) -> float:
        return (self.g_max - self.g_min) / (self.digit_base - 1)


@dataclass
class Tile:
    kh: int          # kernel position (0,0 for dense)
    kw: int
    row0: int        # first input index served by this tile
    col0: int        # first output index served by this tile
    gpos: np.ndarray  # (digits, rows_used, cols_used)
    gneg: np.ndarray


@dataclass
class MappedLayer:
    cfg: CrossbarConfig
    kind: str                 # "conv2d" | "dense"
    weight_shape: tuple
    scale: float              # weight units per integer level: max|W| / 255
    stride: int
    pad: int
    tiles: list

    @property
    def kernel(self) -> int:
        return self.weight_shape[2] if self.kind == "conv2d" else 1


def _weights_to_levels(weights: np.ndarray) -> tuple:
    """Integer level per weight plus the scale; rejects unquantized input."""
    a = float(np.max(np.abs(weights))) if weights.size else 0.0
    max_level = (1 << WEIGHT_BITS) - 1
    if a == 0.0:
        return np.zeros(weights.shape, dtype=np.int64), 0.0
    scale = a / max_level
    q = weights / scale
    qi = np.rint(q)
    if np.max(np.abs(q - qi)) > 1e-6:
        raise ConfigError(
            f"weights are not {WEIGHT_BITS}-bit quantized; run nn.quantize first")
    return qi.astype(np.int64), scale


def map_layer(weights: np.ndarray, cfg: CrossbarConfig,
              stride: int = 1, pad: int = 0) -> MappedLayer:
    """Slice quantized weights into digit conductance pairs on tiles.

    ``weights`` is (C_out, C_in, K, K) for a conv layer or (out, in) for a
    dense layer; stride/pad only apply to conv.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 4:
        kind = "conv2d"
        if weights.shape[2] != weights.shape[3]:
            raise ConfigError("only square kernels are supported")
    elif weights.ndim == 2:
        kind = "dense"
    else:
        raise ConfigError(f"cannot map weights with shape {weights.shape}")
    levels, scale = _weights_to_levels(weights)
    base = cfg.digit_base
    n_dig = cfg.devices_per_weight
    tiles = []
    kk = weights.shape[2] if kind == "conv2d" else 1
    for kh in range(kk):
        for kw in range(kk):
            mat = (levels[:, :, kh, kw].T if kind == "conv2d" else levels.T)
            n_in, n_out = mat.shape
            for row0 in range(0, n_in, cfg.rows):
                for col0 in range(0, n_out, cfg.cols):
                    sub = mat[row0:row0 + cfg.rows, col0:col0 + cfg.cols]
                    mag = np.abs(sub)
                    digs = np.stack([(mag >> (cfg.device_bits * j)) & (base - 1)
                                     for j in range(n_dig)])
                    pos = (sub > 0)
                    gpos = cfg.g_min + digs * pos[None] * cfg.delta_g
                    gneg = cfg.g_min + digs * (~pos)[None] * cfg.delta_g
                    tiles.append(Tile(kh, kw, row0, col0,
                                      gpos.astype(np.float64),
                                      gneg.astype(np.float64)))
    return MappedLayer(cfg=cfg, kind=kind, weight_shape=weights.shape,
                       scale=scale, stride=stride, pad=pad, tiles=tiles)


def unmap_layer(m: MappedLayer) -> np.ndarray:
    """Reconstruct the weight tensor from conductances (exact when sigma=0)."""
    cfg = m.cfg
    out = np.zeros(m.weight_shape)
    for t in m.tiles:
        dpos = np.rint((t.gpos - cfg.g_min) / cfg.delta_g)
        dneg = np.rint((t.gneg - cfg.g_min) / cfg.delta_g)
        powers = (cfg.digit_base ** np.arange(cfg.devices_per_weight)).astype(np.float64)
        q = np.tensordot(powers, dpos - dneg, axes=(0, 0))     # (rows, cols)
        w = q * m.scale
        r, c = q.shape
        if m.kind == "conv2d":
            out[t.col0:t.col0 + c, t.row0:t.row0 + r, t.kh, t.kw] = w.T
        else:
            out[t.col0:t.col0 + c, t.row0:t.row0 + r] = w.T
    return out


def apply_variation(m: MappedLayer, seed: int = 0) -> MappedLayer:
    """Multiply every conductance by exp(N(0, sigma^2)), clamped to the range.

    sigma == 0 returns a copy with bit-identical conductances.
    """
    cfg = m.cfg
    tiles = []
    if cfg.variation_sigma == 0.0:
        tiles = [Tile(t.kh, t.kw, t.row0, t.col0, t.gpos.copy(), t.gneg.copy())
                 for t in m.tiles]
    else:
        rng = np.random.default_rng(seed)
        for t in m.tiles:
            fp = np.exp(cfg.variation_sigma * rng.standard_normal(t.gpos.shape))
            fn = np.exp(cfg.variation_sigma * rng.standard_normal(t.gneg.shape))
            tiles.append(Tile(
                t.kh, t.kw, t.row0, t.col0,
                np.clip(t.gpos * fp, cfg.g_min, cfg.g_max),
                np.clip(t.gneg * fn, cfg.g_min, cfg.g_max)))
    return MappedLayer(cfg=m.cfg, kind=m.kind, weight_shape=m.weight_shape,
                       scale=m.scale, stride=m.stride, pad=m.pad, tiles=tiles)


def _lattice_pitch(cfg: CrossbarConfig, x_q: np.ndarray) -> float:
    """Spacing of the noiseless column-current lattice for quantized inputs.

    Quantized inputs are integer multiples of max|x|/(2^8-1) and differential
    conductances integer multiples of delta_g, so every ideal current is an
    integer multiple of their product.  All-zero input yields zero currents;
    any positive pitch works there.
    """
    a = float(np.max(np.abs(x_q))) if x_q.size else 0.0
    if a == 0.0:
        return cfg.delta_g
    return a * cfg.delta_g / ((1 << WEIGHT_BITS) - 1)


def _adc(i_diff: np.ndarray, i_max: float, bits: int, lattice: float) -> np.ndarray:
    """Mid-tread uniform ADC on [-i_max, i_max]; zero maps to the zero code.

    The digital side afterwards rounds the code to the nearest representable
    partial sum: with 8-bit inputs and discrete device levels every noiseless
    column current is an integer multiple of ``lattice``, so once the ADC
    step drops below half that pitch the conversion becomes lossless (the
    usual resolves-all-partial-sum-levels argument).
    """
    k = (1 << (bits - 1)) - 1
    step = i_max / k
    code = np.clip(np.rint(i_diff / step), -k, k) * step
    return np.rint(code / lattice) * lattice


def _conv_out_hw(m: MappedLayer, h: int, w: int) -> tuple:
    k, s, p = m.kernel, m.stride, m.pad
    return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def crossbar_forward(m: MappedLayer, x: np.ndarray) -> np.ndarray:
    """Analog MAC + ADC replay of the mapped layer; returns bias-free outputs.

    Inputs are expected in [0, 1] and are quantized to 8 bits on entry (a
    no-op if already quantized).  Output is (B, C_out, H_out, W_out) for conv
    or (B, out) for dense, in the same units as a software matmul.
    """
    cfg = m.cfg
    x = nn.quantize(np.asarray(x, dtype=np.float64), WEIGHT_BITS)
    if m.scale == 0.0:
        # all-zero layer: nothing conducts differentially
        if m.kind == "dense":
            return np.zeros((x.shape[0], m.weight_shape[0]))
        ho, wo = _conv_out_hw(m, x.shape[2], x.shape[3])
        return np.zeros((x.shape[0], m.weight_shape[0], ho, wo))
    v_full = 1.0
    base = cfg.digit_base
    if m.kind == "dense":
        if x.ndim != 2 or x.shape[1] != m.weight_shape[1]:
            raise ConfigError(f"dense layer expects (B,{m.weight_shape[1]}) input")
        acc = np.zeros((x.shape[0], m.weight_shape[0]))
        lattice = _lattice_pitch(cfg, x)
        for t in m.tiles:
            r, c = t.gpos.shape[1:]
            v = x[:, t.row0:t.row0 + r]
            i_max = r * v_full * (cfg.g_max - cfg.g_min)
            for j in range(cfg.devices_per_weight):
                i_diff = v @ (t.gpos[j] - t.gneg[j])
                d = _adc(i_diff, i_max, cfg.adc_bits, lattice) / cfg.delta_g
                acc[:, t.col0:t.col0 + c] += (base ** j) * d
        return acc * m.scale
    # conv2d
    b, c_in, h, w = x.shape
    if (c_in, m.kernel, m.kernel) != m.weight_shape[1:]:
        raise ConfigError(f"conv layer expects {m.weight_shape[1]} input channels")
    ho, wo = _conv_out_hw(m, h, w)
    p, s = m.pad, m.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    acc = np.zeros((b, m.weight_shape[0], ho, wo))
    lattice = _lattice_pitch(cfg, x)
    for t in m.tiles:
        r, c = t.gpos.shape[1:]
        v = xp[:, t.row0:t.row0 + r,
               t.kh:t.kh + ho * s:s,
               t.kw:t.kw + wo * s:s]                       # (B, r, ho, wo)
        vm = v.transpose(0, 2, 3, 1).reshape(-1, r)
        i_max = r * v_full * (cfg.g_max - cfg.g_min)
        tile_acc = np.zeros((vm.shape[0], c))
        for j in range(cfg.devices_per_weight):
            i_diff = vm @ (t.gpos[j] - t.gneg[j])
            tile_acc += (base ** j) * (_adc(i_diff, i_max, cfg.adc_bits,
                                            lattice) / cfg.delta_g)
        acc[:, t.col0:t.col0 + c] += tile_acc.reshape(b, ho, wo, c).transpose(0, 3, 1, 2)
    return acc * m.scale


def hardware_soi(m: MappedLayer, x: np.ndarray) -> tuple:
    """(SoI per sample, read cycle count) as the accumulator datapath sees it.

    Per read cycle each first-level adder folds one |MAC| into its register;
    after all cycles a small adder tree reduces the registers.  The result is
    the mean |final MAC| per sample (same normalisation as the software SoI),
    and the cycle count is H_out*W_out*mux_ratio.
    """
    z = crossbar_forward(m, x)
    soi = np.abs(z).reshape(z.shape[0], -1).mean(axis=1)
    if m.kind == "dense":
        positions = 1
    else:
        positions = z.shape[2] * z.shape[3]
    return soi, positions * m.cfg.mux_ratio


def map_model_layer0(model: nn.ModelGraph, cfg: CrossbarConfig) -> MappedLayer:
    """Quantize and map the model's first layer (the one the SoI reads)."""
    layer = model.layers[0]
    w = nn.quantize(model.params["layer0.W"], WEIGHT_BITS)
    if isinstance(layer, nn.Conv2d):
        return map_layer(w, cfg, stride=layer.stride, pad=layer.pad)
    if isinstance(layer, nn.Dense):
        return map_layer(w, cfg)
    raise ConfigError("layer 0 must be conv2d or dense to map onto a crossbar")

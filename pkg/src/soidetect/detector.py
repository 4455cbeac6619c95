"""Probability lookup table over the SoI statistic, and detection metrics.

The table stores, for uniform SoI bins covering the calibration data, the
Laplace-smoothed probability that a sample in that bin is clean:

    P_k = (n_clean_k + 1) / (n_clean_k + n_adv_k + 2)

Lookup finds the largest stored sample point <= the query (values below the
range clamp to the first entry, above to the last) by binary search and also
reports how many table accesses the search needed, which feeds the energy
model.  The final detector either draws a uniform random number against P_k
(the hardware-faithful stochastic mode) or thresholds P_k at 0.5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataFormatError

LUT_VERSION = 1


@dataclass
class SoIProbabilityLUT:
    samples: np.ndarray          # strictly increasing bin left edges
    probs: np.ndarray            # P(clean) per bin, each in (0,1) after smoothing
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.shape != self.probs.shape:
            raise ConfigError("LUT samples/probs must be 1-D and equally long")
        if len(self.samples) < 1:
            raise ConfigError("LUT must not be empty")
        if np.any(np.diff(self.samples) <= 0):
            raise ConfigError("LUT samples must be strictly increasing")
        if np.any((self.probs < 0) | (self.probs > 1)):
            raise ConfigError("LUT probabilities must lie in [0,1]")


def build_lut(soi_clean, soi_adv, bins: int = 64, smoothing: int = 1,
              meta: dict | None = None) -> SoIProbabilityLUT:
    """Histogram both SoI sets on shared uniform bins and store P(clean).

    Bins cover [min, max] of the union; the last bin includes its right edge.
    """
    if bins < 8:
        raise ConfigError(f"need at least 8 bins, got {bins}")
    if smoothing < 1:
        raise ConfigError("smoothing count must be >= 1")
    soi_clean = np.asarray(soi_clean, dtype=np.float64)
    soi_adv = np.asarray(soi_adv, dtype=np.float64)
    if soi_clean.size == 0 or soi_adv.size == 0:
        raise ConfigError("both SoI sets must be non-empty")
    lo = float(min(soi_clean.min(), soi_adv.min()))
    hi = float(max(soi_clean.max(), soi_adv.max()))
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise ConfigError("SoI sets contain non-finite values")
    if lo == hi:
        raise ConfigError("degenerate SoI range: all calibration values equal")
    edges = np.linspace(lo, hi, bins + 1)
    n_c, _ = np.histogram(soi_clean, bins=edges)
    n_a, _ = np.histogram(soi_adv, bins=edges)
    probs = (n_c + smoothing) / (n_c + n_a + 2.0 * smoothing)
    info = {"bins": bins, "range": [lo, hi], "smoothing": smoothing,
            "n_clean": int(soi_clean.size), "n_adv": int(soi_adv.size)}
    info.update(meta or {})
    return SoIProbabilityLUT(samples=edges[:-1], probs=probs, meta=info)


def lookup(lut: SoIProbabilityLUT, soi: float) -> tuple:
    """(P_k, n_accesses) for the largest sample <= soi, clamped at both ends.

    The binary search runs over entries 1..n-1 (a query below the second
    entry always resolves to the first), so the probe count is at most
    ceil(log2(len(samples))); reading out P_k counts as one access, hence the
    minimum of 1.
    """
    s = lut.samples
    n = len(s)
    value = float(soi)
    lo, hi = 1, n
    probes = 0
    while lo < hi:
        mid = (lo + hi) // 2
        probes += 1
        if s[mid] <= value:
            lo = mid + 1
        else:
            hi = mid
    return float(lut.probs[lo - 1]), max(1, probes)


def lookup_many(lut: SoIProbabilityLUT, soi_values) -> tuple:
    """Vectorised lookup: (probs array, n_accesses array)."""
    vals = np.asarray(soi_values, dtype=np.float64)
    out_p = np.empty(vals.shape)
    out_n = np.empty(vals.shape, dtype=np.int64)
    flat_p, flat_n = out_p.reshape(-1), out_n.reshape(-1)
    for i, v in enumerate(vals.reshape(-1)):
        flat_p[i], flat_n[i] = lookup(lut, v)
    return out_p, out_n


def detect(lut: SoIProbabilityLUT, soi: float, rng: np.random.Generator) -> int:
    """1 (accept as clean) iff a uniform draw lands below P_k."""
    p, _ = lookup(lut, soi)
    return int(rng.uniform() < p)


# ---------------------------------------------------------------------------
# metrics


def roc_auc(clean_scores, adv_scores) -> float:
    """Exact P(score_clean > score_adv) + 0.5 * P(tie) over all pairs.

    Computed via the rank-sum identity, which equals the pairwise average;
    higher scores must indicate "more clean".
    """
    c = np.asarray(clean_scores, dtype=np.float64)
    a = np.asarray(adv_scores, dtype=np.float64)
    if c.size == 0 or a.size == 0:
        raise ConfigError("roc_auc needs non-empty score sets")
    ranks = rankdata(np.concatenate([c, a]))
    r_c = ranks[:c.size].sum()
    return float((r_c - c.size * (c.size + 1) / 2.0) / (c.size * a.size))


def _accepted(lut, soi_values, mode, rng, draws):
    probs, _ = lookup_many(lut, soi_values)
    if mode == "threshold":
        return (probs >= 0.5).astype(np.float64)
    if mode == "stochastic":
        if rng is None:
            raise ConfigError("stochastic mode needs an rng")
        u = rng.uniform(size=(draws,) + probs.shape)
        return (u < probs).mean(axis=0)
    raise ConfigError(f"unknown detector mode {mode!r}")


def accuracy_metric(model, lut, x_clean, y_clean, mode: str = "threshold",
                    rng: np.random.Generator | None = None, draws: int = 32) -> float:
    """Fraction of clean inputs that are accepted AND correctly classified."""
    from . import nn, soi as soi_mod
    soi_values = soi_mod.soi_distribution(model, x_clean)
    acc_mask = _accepted(lut, soi_values, mode, rng, draws)
    correct = (nn.predict(model, x_clean) == np.asarray(y_clean)).astype(np.float64)
    return float(np.mean(acc_mask * correct))


def error_metric(model, lut, x_adv, y_true, mode: str = "threshold",
                 rng: np.random.Generator | None = None, draws: int = 32) -> float:
    """Fraction of adversarial inputs that slip through AND are misclassified."""
    from . import nn, soi as soi_mod
    soi_values = soi_mod.soi_distribution(model, x_adv)
    acc_mask = _accepted(lut, soi_values, mode, rng, draws)
    wrong = (nn.predict(model, x_adv) != np.asarray(y_true)).astype(np.float64)
    return float(np.mean(acc_mask * wrong))


# ---------------------------------------------------------------------------
# JSON persistence (full double precision survives the round trip)


def save_lut(lut: SoIProbabilityLUT, path: str) -> None:
    doc = {
        "version": LUT_VERSION,
        "samples": lut.samples.tolist(),
        "probs": lut.probs.tolist(),
        "meta": lut.meta,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_lut(path: str) -> SoIProbabilityLUT:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path} is not valid JSON: {e}") from e
    if doc.get("version") != LUT_VERSION:
        raise DataFormatError(f"unsupported LUT version in {path}")
    try:
        return SoIProbabilityLUT(samples=np.array(doc["samples"]),
                                 probs=np.array(doc["probs"]),
                                 meta=doc.get("meta", {}))
    except (KeyError, ConfigError) as e:
        raise DataFormatError(f"{path}: {e}") from e

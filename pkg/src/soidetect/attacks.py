"""White-box, black-box and volumetric-noise input attacks.

All gradient-based attacks ascend the plain cross-entropy loss of the target
(or surrogate) network and keep the result inside the input domain [0, 1].
Randomness is derived per sample as ``base_seed XOR sample_index`` so results
do not depend on how a batch is split.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from . import nn
from .errors import ConfigError

_SEED_MASK = (1 << 63) - 1


def parse_number(v) -> float:
    """Accept JSON numbers or exact fraction strings like "8/255"."""
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(Fraction(v))
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"cannot parse number {v!r}") from e
    raise ConfigError(f"cannot parse number {v!r}")


def format_number(x: float):
    """Render as an exact fraction string when one exists, else as a float."""
    if x == int(x):
        return int(x)
    frac = Fraction(x).limit_denominator(1 << 16)
    if float(frac) == x:
        return f"{frac.numerator}/{frac.denominator}"
    return x


@dataclass(frozen=True)
class AttackSpec:
    family: str                  # fgsm | pgd | gaussian_patch
    eps: float = 0.0             # L-inf budget (fgsm/pgd)
    alpha: float = 0.0           # pgd step size
    n: int = 1                   # pgd iteration count
    sigma_noise: float = 0.5     # gaussian_patch noise std
    frac_volume: float = 1.0     # gaussian_patch block volume fraction
    seed: int = 0
    surrogate: bool = False      # generate on a surrogate model (black-box)

    def __post_init__(self):
        if self.family not in ("fgsm", "pgd", "gaussian_patch"):
            raise ConfigError(f"unknown attack family {self.family!r}")
        if self.eps < 0 or self.alpha < 0:
            raise ConfigError("attack budgets must be non-negative")
        if self.n < 1:
            raise ConfigError("pgd needs n >= 1")
        if self.sigma_noise < 0:
            raise ConfigError("sigma_noise must be non-negative")
        if not 0 < self.frac_volume <= 1:
            raise ConfigError("frac_volume must lie in (0, 1]")

    def slug(self) -> str:
        """Filesystem-safe tag used in output file names."""
        if self.family == "gaussian_patch":
            return f"gaussian_patch-s{self.sigma_noise:g}-f{self.frac_volume:g}"
        tag = str(format_number(self.eps)).replace("/", "-")
        out = f"{self.family}-{tag}"
        if self.family == "pgd":
            out += f"-n{self.n}"
        if self.surrogate:
            out += "-bb"
        return out


def attack_to_json(spec: AttackSpec) -> dict:
    return {
        "family": spec.family,
        "eps": format_number(spec.eps),
        "alpha": format_number(spec.alpha),
        "n": spec.n,
        "sigma_noise": format_number(spec.sigma_noise),
        "frac_volume": format_number(spec.frac_volume),
        "seed": spec.seed,
        "surrogate": spec.surrogate,
    }


def attack_from_json(d: dict) -> AttackSpec:
    known = {"family", "eps", "alpha", "n", "sigma_noise", "frac_volume",
             "seed", "surrogate"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown attack spec fields: {sorted(extra)}")
    if "family" not in d:
        raise ConfigError("attack spec needs a 'family'")
    return AttackSpec(
        family=d["family"],
        eps=parse_number(d.get("eps", 0)),
        alpha=parse_number(d.get("alpha", 0)),
        n=int(d.get("n", 1)),
        sigma_noise=parse_number(d.get("sigma_noise", 0.5)),
        frac_volume=parse_number(d.get("frac_volume", 1.0)),
        seed=int(d.get("seed", 0)),
        surrogate=bool(d.get("surrogate", False)),
    )


# ---------------------------------------------------------------------------
# gradient attacks


def _ce_input_grad(model, x, y):
    return nn.backward(model, x, y, nn.LossSpec("cross_entropy")).input_grad


def fgsm(model: nn.ModelGraph, x: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    """x + eps*sign(grad CE), clipped to [0,1].  sign(0) == 0."""
    if eps < 0:
        raise ConfigError("eps must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    g = _ce_input_grad(model, x, np.asarray(y))
    return np.clip(x + eps * np.sign(g), 0.0, 1.0)


def _per_sample_uniform(base_seed, count, shape, lo, hi, index_offset):
    out = np.empty((count,) + shape)
    for i in range(count):
        r = np.random.default_rng((base_seed ^ (index_offset + i)) & _SEED_MASK)
        out[i] = r.uniform(lo, hi, size=shape)
    return out


def pgd(model: nn.ModelGraph, x: np.ndarray, y: np.ndarray, spec: AttackSpec,
        random_start: bool = True, index_offset: int = 0) -> np.ndarray:
    """Projected gradient descent in the L-inf ball of radius spec.eps.

    Starts from x plus uniform noise in [-eps, eps] (unless ``random_start``
    is off), then runs ``spec.n`` steps of size ``spec.alpha``, projecting
    onto the ball and clipping into [0, 1] after every step.
    """
    if spec.family != "pgd":
        raise ConfigError(f"pgd called with a {spec.family!r} spec")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if random_start and spec.eps > 0:
        noise = _per_sample_uniform(spec.seed, x.shape[0], x.shape[1:],
                                    -spec.eps, spec.eps, index_offset)
        xa = np.clip(np.clip(x + noise, x - spec.eps, x + spec.eps), 0.0, 1.0)
    else:
        xa = x.copy()
    for _ in range(spec.n):
        g = _ce_input_grad(model, xa, y)
        xa = np.clip(xa + spec.alpha * np.sign(g), x - spec.eps, x + spec.eps)
        xa = np.clip(xa, 0.0, 1.0)
    return xa


def gaussian_patch(x: np.ndarray, spec: AttackSpec, index_offset: int = 0) -> np.ndarray:
    """Additive N(0, sigma^2) noise on one contiguous (c,h,w) sub-block per sample.

    The block's integer dimensions are the closest realizable match to
    ``frac_volume`` of the full volume; its origin is drawn per sample from
    the spec seed.  Pixels outside the block are returned bit-identical.
    """
    if spec.family != "gaussian_patch":
        raise ConfigError(f"gaussian_patch called with a {spec.family!r} spec")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ConfigError("gaussian_patch expects a (B,C,H,W) batch")
    _, c_full, h_full, w_full = x.shape
    c, h, w = patch_dims(spec.frac_volume, c_full, h_full, w_full)
    out = x.copy()
    for i in range(x.shape[0]):
        r = np.random.default_rng((spec.seed ^ (index_offset + i)) & _SEED_MASK)
        oc = int(r.integers(0, c_full - c + 1))
        oh = int(r.integers(0, h_full - h + 1))
        ow = int(r.integers(0, w_full - w + 1))
        block = out[i, oc:oc + c, oh:oh + h, ow:ow + w]
        noise = spec.sigma_noise * r.standard_normal(size=(c, h, w))
        out[i, oc:oc + c, oh:oh + h, ow:ow + w] = np.clip(block + noise, 0.0, 1.0)
    return out


def patch_dims(frac: float, c_full: int, h_full: int, w_full: int) -> tuple:
    """Integer (c,h,w) block dims whose volume approximates frac * full volume."""
    if not 0 < frac <= 1:
        raise ConfigError("frac_volume must lie in (0, 1]")
    c = min(c_full, max(1, round(c_full * frac ** (1.0 / 3.0))))
    area = frac * c_full * h_full * w_full / c
    h = min(h_full, max(1, round(np.sqrt(area * h_full / w_full))))
    w = min(w_full, max(1, round(area / h)))
    if c * h * w <= 0:
        raise ConfigError("frac_volume produced an empty block")
    return c, h, w


def run_attack(model, x, y, spec: AttackSpec, surrogate_model=None,
               index_offset: int = 0) -> np.ndarray:
    """Dispatch on the spec; uses the surrogate when the spec asks for one."""
    gen_model = model
    if spec.surrogate:
        if surrogate_model is None:
            raise ConfigError("attack spec requests a surrogate but none was given")
        gen_model = surrogate_model
    if spec.family == "fgsm":
        return fgsm(gen_model, x, y, spec.eps)
    if spec.family == "pgd":
        return pgd(gen_model, x, y, spec, index_offset=index_offset)
    return gaussian_patch(x, spec, index_offset=index_offset)


def blackbox(surrogate: nn.ModelGraph, x, y, spec: AttackSpec) -> np.ndarray:
    """Generate the attack against a surrogate model (transfer attack)."""
    if surrogate is None:
        raise ConfigError("black-box attack needs a surrogate model")
    if spec.family == "fgsm":
        return fgsm(surrogate, x, y, spec.eps)
    if spec.family == "pgd":
        return pgd(surrogate, x, y, spec)
    return gaussian_patch(x, spec)


# attack ladders used around the package (strengths in the usual /255 units)

STRONG_PGD = AttackSpec("pgd", eps=16 / 255, alpha=8 / 255, n=10)
MODERATE_PGD = AttackSpec("pgd", eps=8 / 255, alpha=4 / 255, n=10)
WEAK_PGD = AttackSpec("pgd", eps=4 / 255, alpha=2 / 255, n=10)

EVAL_LADDER = (
    AttackSpec("pgd", eps=8 / 255, alpha=2 / 255, n=10),
    AttackSpec("pgd", eps=16 / 255, alpha=4 / 255, n=10),
    AttackSpec("pgd", eps=32 / 255, alpha=4 / 255, n=10),
    AttackSpec("pgd", eps=32 / 255, alpha=8 / 255, n=10),
)

"""Energy model for the signature datapath (adders, registers, RNG, LUT).

Component counts follow the accumulate-then-reduce layout: one first-level
adder per ADC (columns / mux_ratio), one register per first-level adder, a
binary reduction tree over those registers (2*N_L1 - 1 adder instances
counting every level), and one read cycle per muxed column per output
position.  Default per-operation energies: the adder figure is the published
19.2 fJ; the register, RNG and LUT-access figures are calibrated so that the
128x128 / mux 8 / 32x32 output reference point lands on E_STATIC = 2674.7 pJ
and E_SoI = 2679.7 pJ at nine LUT accesses.  All are config-overridable.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, asdict

from .errors import ConfigError
from . import detector

JOULE = 1.0
PJ = 1e-12
FJ = 1e-15


@dataclass(frozen=True)
class ComponentEnergies:
    e_adder: float = 19.2 * FJ
    e_register: float = 1.2 * FJ
    e_rng: float = 236.0 * FJ
    e_lut_access: float = 5.0 * PJ / 9.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ComponentCounts:
    n_l1: int      # first-level adders (one per ADC)
    n_l2: int      # adder instances in the reduction tree
    n_r: int       # registers
    n_c: int       # read cycles for one input


def derive_counts(cols: int, mux_ratio: int, out_h: int, out_w: int) -> ComponentCounts:
    """Counts for a crossbar of ``cols`` columns and a HxW output map."""
    if mux_ratio < 1 or cols % mux_ratio:
        raise ConfigError("mux_ratio must divide the column count")
    n_l1 = cols // mux_ratio
    if n_l1 & (n_l1 - 1):
        raise ConfigError(f"ADC count {n_l1} must be a power of two")
    if out_h < 1 or out_w < 1:
        raise ConfigError("output map must be non-empty")
    return ComponentCounts(n_l1=n_l1, n_l2=2 * n_l1 - 1, n_r=n_l1,
                           n_c=out_h * out_w * mux_ratio)


def static_energy(counts: ComponentCounts, ce: ComponentEnergies) -> float:
    """Per-input energy of the always-on accumulation datapath, in joules."""
    return (counts.n_c * (counts.n_l1 * ce.e_adder + counts.n_r * ce.e_register)
            + counts.n_l2 * ce.e_adder + ce.e_rng)


def soi_energy(counts: ComponentCounts, ce: ComponentEnergies, n_x: int) -> float:
    """Static energy plus the LUT traffic for one detection, in joules."""
    if n_x < 1:
        raise ConfigError("a detection needs at least one LUT access")
    return static_energy(counts, ce) + n_x * ce.e_lut_access


def nx_histogram(lut, soi_values) -> dict:
    """Distribution of LUT access counts over a stream of SoI queries."""
    counts = Counter()
    for v in soi_values:
        _, n_x = detector.lookup(lut, float(v))
        counts[int(n_x)] += 1
    return dict(sorted(counts.items()))


def format_energy(x: float) -> str:
    """Human-readable joules: 2.6747e-09 -> '2.6747 nJ', 5e-12 -> '5 pJ'."""
    for unit, name in ((1e-3, "mJ"), (1e-6, "uJ"), (1e-9, "nJ"),
                       (1e-12, "pJ"), (1e-15, "fJ")):
        if abs(x) >= unit:
            return f"{x / unit:.6g} {name}"
    return f"{x:.6g} J"


@dataclass
class EnergyReport:
    counts: ComponentCounts
    energies: ComponentEnergies
    n_x: int
    e_static: float
    e_lut: float
    e_soi: float
    nx_hist: dict | None = None

    def to_json(self) -> dict:
        return {
            "counts": asdict(self.counts),
            "component_energies_j": asdict(self.energies),
            "n_x": self.n_x,
            "e_static_j": self.e_static,
            "e_lut_j": self.e_lut,
            "e_soi_j": self.e_soi,
            "e_static_pretty": format_energy(self.e_static),
            "e_soi_pretty": format_energy(self.e_soi),
            "nx_histogram": self.nx_hist or {},
        }


def build_report(cols: int, mux_ratio: int, out_h: int, out_w: int,
                 ce: ComponentEnergies | None = None, n_x: int = 1,
                 nx_hist: dict | None = None) -> EnergyReport:
    ce = ce or ComponentEnergies()
    counts = derive_counts(cols, mux_ratio, out_h, out_w)
    e_static = static_energy(counts, ce)
    e_soi = soi_energy(counts, ce, n_x)
    return EnergyReport(counts=counts, energies=ce, n_x=n_x,
                        e_static=e_static, e_lut=e_soi - e_static, e_soi=e_soi,
                        nx_hist=nx_hist)


def save_report(report: EnergyReport, path: str) -> None:
    with open(path, "w") as f:
        json.dump(report.to_json(), f, indent=1)
        f.write("\n")

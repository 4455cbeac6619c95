"""Datapath energy model: component counts, totals, and the access histogram.

The 128-column / mux 8 / 32x32 output reference point is checked against
hand-computed totals:

    E_STATIC = 8192*(16*19.2fJ + 16*1.2fJ) + 31*19.2fJ + 236fJ = 2674.7 pJ
    E_SoI(9) = E_STATIC + 9 * (5.0pJ/9)                        = 2679.7 pJ
"""

import json
import math

import numpy as np
import pytest

from soidetect import detector, energy
from soidetect.errors import ConfigError


def test_reference_counts():
    c = energy.derive_counts(cols=128, mux_ratio=8, out_h=32, out_w=32)
    assert (c.n_l1, c.n_l2, c.n_r, c.n_c) == (16, 31, 16, 8192)


def test_reference_energies():
    c = energy.derive_counts(cols=128, mux_ratio=8, out_h=32, out_w=32)
    ce = energy.ComponentEnergies()
    assert energy.static_energy(c, ce) == pytest.approx(2674.7e-12, rel=1e-9)
    assert energy.soi_energy(c, ce, n_x=9) == pytest.approx(2679.7e-12, rel=1e-9)


def test_count_errors():
    with pytest.raises(ConfigError):
        energy.derive_counts(128, 7, 4, 4)       # mux does not divide cols
    with pytest.raises(ConfigError):
        energy.derive_counts(96, 8, 4, 4)        # 12 ADCs: not a power of two
    with pytest.raises(ConfigError):
        energy.derive_counts(128, 0, 4, 4)
    with pytest.raises(ConfigError):
        energy.derive_counts(128, 8, 0, 4)


def test_mux_equals_cols_edge():
    c = energy.derive_counts(cols=128, mux_ratio=128, out_h=2, out_w=3)
    assert (c.n_l1, c.n_l2, c.n_r) == (1, 1, 1)
    assert c.n_c == 2 * 3 * 128


def test_energy_scales_linearly_in_cycles():
    ce = energy.ComponentEnergies()
    e1 = energy.static_energy(energy.derive_counts(128, 8, 16, 16), ce)
    e2 = energy.static_energy(energy.derive_counts(128, 8, 32, 32), ce)
    per_cycle = 16 * (ce.e_adder + ce.e_register)
    assert e2 - e1 == pytest.approx((8192 - 2048) * per_cycle, rel=1e-12)


def test_soi_energy_checks_access_count():
    c = energy.derive_counts(128, 8, 32, 32)
    ce = energy.ComponentEnergies()
    with pytest.raises(ConfigError):
        energy.soi_energy(c, ce, n_x=0)
    got = energy.soi_energy(c, ce, n_x=3)
    assert got == pytest.approx(energy.static_energy(c, ce) + 3 * ce.e_lut_access)


def test_negative_component_energy_rejected():
    with pytest.raises(ConfigError):
        energy.ComponentEnergies(e_rng=-1.0)


def test_nx_histogram_counts_and_bound():
    rng = np.random.default_rng(0)
    lut = detector.build_lut(rng.uniform(0.0, 0.4, 500),
                             rng.uniform(0.3, 1.0, 500), bins=64)
    queries = rng.uniform(-0.2, 1.2, 300)
    hist = energy.nx_histogram(lut, queries)
    assert sum(hist.values()) == 300
    cap = math.ceil(math.log2(len(lut.samples)))
    assert all(1 <= k <= cap for k in hist)
    # the histogram must agree with per-query lookups
    want = {}
    for v in queries:
        _, n = detector.lookup(lut, float(v))
        want[n] = want.get(n, 0) + 1
    assert hist == want


def test_format_energy():
    assert energy.format_energy(2674.7e-12) == "2.6747 nJ"
    assert energy.format_energy(5.0e-12) == "5 pJ"
    assert energy.format_energy(1.5e-3) == "1.5 mJ"
    assert energy.format_energy(0.0) == "0 J"


def test_build_and_save_report(tmp_path):
    rep = energy.build_report(128, 8, 32, 32, n_x=9, nx_hist={5: 10, 6: 2})
    assert rep.e_lut == pytest.approx(5.0e-12, rel=1e-9)
    assert rep.e_soi == pytest.approx(rep.e_static + rep.e_lut)
    p = tmp_path / "energy.json"
    energy.save_report(rep, str(p))
    d = json.loads(p.read_text())
    assert d["counts"] == {"n_l1": 16, "n_l2": 31, "n_r": 16, "n_c": 8192}
    assert d["e_static_j"] == pytest.approx(2674.7e-12, rel=1e-9)
    assert d["e_soi_pretty"] == "2.6797 nJ"
    assert d["nx_histogram"] == {"5": 10, "6": 2}

"""Price the add-on detector hardware for a few crossbar geometries.

The static part (adder tree plus registers across the column mux cycles)
dominates; the table lookup adds one access-dependent term.  The last block
estimates the expected per-query cost from a real lookup-depth histogram.
"""

import argparse

import numpy as np

from soidetect import detector, energy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-h", type=int, default=32)
    ap.add_argument("--out-w", type=int, default=32)
    args = ap.parse_args()

    ce = energy.ComponentEnergies()
    print(f"components: adder {energy.format_energy(ce.e_adder)}, register "
          f"{energy.format_energy(ce.e_register)}, rng "
          f"{energy.format_energy(ce.e_rng)}, lut access "
          f"{energy.format_energy(ce.e_lut_access)} "
          f"({energy.format_energy(9 * ce.e_lut_access)} per 9-access query)")

    print(f"\nper-inference cost, {args.out_h}x{args.out_w} output map:")
    print(f"  {'cols':>5} {'mux':>4} {'adders':>7} {'regs':>5} {'cycles':>7} "
          f"{'E_static':>10} {'E_soi(9)':>10}")
    for cols, mux in ((64, 4), (128, 8), (128, 16), (256, 8)):
        counts = energy.derive_counts(cols=cols, mux_ratio=mux,
                                      out_h=args.out_h, out_w=args.out_w)
        e_s = energy.static_energy(counts, ce)
        e_q = energy.soi_energy(counts, ce, n_x=9)
        print(f"  {cols:5d} {mux:4d} {counts.n_l1 + counts.n_l2:7d} "
              f"{counts.n_r:5d} {counts.n_c:7d} "
              f"{energy.format_energy(e_s):>10} {energy.format_energy(e_q):>10}")

    # lookup depth is data dependent: binary search over the table bins
    rng = np.random.default_rng(5)
    lut = detector.build_lut(rng.normal(0.12, 0.03, 3000),
                             rng.normal(0.55, 0.12, 3000), bins=512)
    queries = np.concatenate([rng.normal(0.12, 0.03, 500),
                              rng.normal(0.55, 0.12, 500)])
    hist = energy.nx_histogram(lut, queries)
    counts = energy.derive_counts(cols=128, mux_ratio=8,
                                  out_h=args.out_h, out_w=args.out_w)
    mean_nx = sum(k * v for k, v in hist.items()) / sum(hist.values())
    mean_e = sum(energy.soi_energy(counts, ce, n_x=k) * v
                 for k, v in hist.items()) / sum(hist.values())
    print(f"\nlookup depth over {len(queries)} queries, 512-bin table: "
          + ", ".join(f"{k}:{v}" for k, v in sorted(hist.items())))
    print(f"mean depth {mean_nx:.2f} accesses -> expected per-query "
          f"{energy.format_energy(mean_e)}")


if __name__ == "__main__":
    main()

"""Map a first layer onto the crossbar model and measure what the ADC costs.

Shows the digit decomposition roundtrip, MAC fidelity as a function of ADC
resolution, the signature error against its worst-case quantization bound,
and what conductance variation at the device presets does to the readout.
"""

import argparse

import numpy as np

from soidetect import data, nn, soi, xbar


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    splits = data.make_synthetic(seed=args.seed, n_train=64, n_test=64,
                                 n_classes=4, shape=(1, 16, 16))
    model = nn.build_model(
        [nn.Conv2d(6, 3, stride=1, pad=1), nn.Relu(), nn.Flatten(),
         nn.Dense(4)],
        splits.train_x.shape[1:], seed=args.seed)
    x = nn.quantize(splits.test_x, 8)
    q = model.copy()
    q.params["layer0.W"] = nn.quantize(q.params["layer0.W"], 8)
    _, z_ref = nn.forward(q, x)
    sw = soi.compute_soi(q, x)

    base = xbar.CrossbarConfig(rows=16, cols=16, mux_ratio=4, adc_bits=12,
                               on_off_ratio=100.0)
    mapped = xbar.map_model_layer0(model, base)
    w_back = xbar.unmap_layer(mapped)
    exact = np.array_equal(w_back, q.params["layer0.W"])
    print(f"mapped layer0 {mapped.weight_shape} onto {len(mapped.tiles)} "
          f"tiles of {base.rows}x{base.cols}; digit roundtrip exact: {exact}")

    print("\nMAC fidelity vs ADC resolution (relative error, whole batch):")
    for bits in (6, 8, 10, 12, 14):
        cfg = xbar.CrossbarConfig(rows=16, cols=16, mux_ratio=4,
                                  adc_bits=bits, on_off_ratio=100.0)
        z_hw = xbar.crossbar_forward(xbar.map_model_layer0(model, cfg), x)
        rel = np.linalg.norm(z_hw - z_ref) / np.linalg.norm(z_ref)
        print(f"  adc {bits:2d} bits  rel err {rel:.2e}")

    coarse = xbar.CrossbarConfig(rows=16, cols=16, mux_ratio=4, adc_bits=8,
                                 on_off_ratio=100.0)
    mapped8 = xbar.map_model_layer0(model, coarse)
    hw, cycles = xbar.hardware_soi(mapped8, x)
    worst = np.max(np.abs(hw - sw))
    k = (1 << (coarse.adc_bits - 1)) - 1
    lattice = float(np.max(np.abs(x))) * coarse.delta_g / 255
    step = 1 * (coarse.g_max - coarse.g_min) / k        # rows_used = 1 per tile
    bound = (0.5 * (step + lattice) / coarse.delta_g * mapped8.scale
             * sum(coarse.digit_base ** j
                   for j in range(coarse.devices_per_weight))
             * len(mapped8.tiles))
    print(f"\nhardware signature at adc 8: max |hw - sw| {worst:.2e} "
          f"(worst-case bound {bound:.2e}), {cycles} ADC cycles per sample")

    print("\nconductance variation (device presets, adc 12):")
    for preset in ("sram", "rram", "fefet"):
        cfg = xbar.CrossbarConfig(rows=16, cols=16, mux_ratio=4, adc_bits=12,
                                  on_off_ratio=100.0, device_preset=preset)
        varied = xbar.apply_variation(xbar.map_model_layer0(model, cfg),
                                      seed=args.seed + 17)
        hw_v, _ = xbar.hardware_soi(varied, x)
        drift = np.mean(np.abs(hw_v - sw)) / np.mean(sw)
        print(f"  {preset:6s} sigma {cfg.variation_sigma:.2f}  "
              f"mean signature drift {100 * drift:5.1f}%")


if __name__ == "__main__":
    main()

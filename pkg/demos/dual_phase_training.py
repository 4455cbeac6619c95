"""Walk one seed through the dual-phase recipe and watch the signature move.

After plain pretraining, clean and attacked inputs produce overlapping
signature distributions.  Phase 1 pins the two populations to separate
targets, phase 2 recovers task accuracy with layer 0 frozen, and the
calibrated lookup table turns the signature into an accept probability.
Run with --quick for a fast smoke pass (weaker separation).
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from soidetect import attacks, config, detector, nn, pipeline, soi


def describe(tag, model, splits, spec):
    s_c = soi.soi_distribution(model, splits.test_x)
    xa = attacks.run_attack(model, splits.test_x, splits.test_y, spec)
    s_a = soi.soi_distribution(model, xa)
    auc = 1.0 - detector.roc_auc(s_c, s_a)
    acc = nn.accuracy(model, splits.test_x, splits.test_y)
    print(f"{tag:10s} clean acc {acc:.3f} | SoI clean "
          f"{s_c.mean():.3f}+-{s_c.std():.3f} adv {s_a.mean():.3f}"
          f"+-{s_a.std():.3f} | detection AUC {auc:.3f}")
    return s_c, s_a


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--quick", action="store_true",
                    help="cut phase-1 epochs 50 -> 8 for a fast pass")
    args = ap.parse_args()

    cfg = config.load_config(
        overrides={"phase1": {"epochs": 8}, "phase2": {"epochs": 1}}
        if args.quick else None)
    splits = pipeline.load_splits(cfg)
    n_classes = int(splits.train_y.max()) + 1
    strong = pipeline._seeded_attack(
        attacks.attack_from_json(cfg["phase1"]["attack"]), args.seed)
    print(f"dataset {cfg['dataset']['name']} "
          f"({len(splits.train_x)} train / {len(splits.test_x)} test), "
          f"probe attack {strong.slug()}")

    t0 = time.perf_counter()
    model = nn.build_model(
        config.model_layers(cfg["model"], n_classes),
        splits.train_x.shape[1:], seed=args.seed)
    pre = soi.train_crossentropy(model, splits.train_x, splits.train_y,
                                 config.train_config(cfg["pretrain"],
                                                     args.seed))
    describe("pretrain", pre, splits, strong)

    p1 = replace(config.phase1_config(cfg["phase1"], args.seed),
                 attack=strong)
    m1 = soi.train_phase1(pre, splits.train_x, splits.train_y, p1)
    describe("phase 1", m1, splits, strong)

    p2 = config.phase2_config(cfg["phase2"], args.seed)
    final = soi.train_phase2(m1, splits.train_x, splits.train_y, p2)
    describe("phase 2", final, splits, strong)
    same = np.array_equal(m1.params["layer0.W"], final.params["layer0.W"])
    print(f"layer 0 bit-identical through phase 2: {same}")

    lut_spec = pipeline._seeded_attack(
        attacks.attack_from_json(cfg["lut"]["attack"]), args.seed)
    lut = detector.build_lut(
        soi.soi_distribution(final, splits.train_x),
        soi.soi_distribution(final, splits.train_x, splits.train_y,
                             attack=lut_spec),
        bins=cfg["lut"]["bins"], smoothing=cfg["lut"]["smoothing"])
    print(f"\nlookup table: {len(lut.samples)} bins over "
          f"[{lut.samples[0]:.3f}, {lut.samples[-1]:.3f}]")
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        i = min(int(frac * (len(lut.samples) - 1)), len(lut.samples) - 1)
        print(f"  bin at SoI {lut.samples[i]:.3f}  ->  "
              f"P(clean) {lut.probs[i]:.3f}")

    xa = attacks.run_attack(final, splits.test_x, splits.test_y, lut_spec)
    rng = np.random.default_rng(args.seed)
    for mode in ("threshold", "stochastic"):
        acc = detector.accuracy_metric(final, lut, splits.test_x,
                                       splits.test_y, mode=mode, rng=rng)
        err = detector.error_metric(final, lut, xa, splits.test_y,
                                    mode=mode, rng=rng)
        print(f"{mode:10s} accepted-and-correct on clean {acc:.3f} | "
              f"accepted-and-wrong on attacked {err:.3f}")
    print(f"\ntotal {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()

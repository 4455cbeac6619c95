"""End-to-end experiment stages and the artifact files they produce.

A run directory contains one subdirectory per seed with checkpoints
(pretrain / phase1 / final / optional surrogate), the probability table
(``lut.json``), per-sample SoI dumps (``soi_clean.csv``,
``soi_adv_<attack>.csv``), detection metrics (``metrics.csv``: one row per
attack config and mode), histogram plot data, a crossbar simulation report
and the energy report.  The top level aggregates metrics across seeds
(median) with the same columns.  Every artifact embeds the sha256 of the
merged config, and stages that resume from an earlier artifact refuse to run
if the hash does not match.

Everything is deterministic given the config: rerunning a pipeline must
produce byte-identical metrics.csv files.
"""

from __future__ import annotations

import io
import csv
import hashlib
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import nn, attacks, soi, detector, xbar, energy as energy_mod, config as cfg_mod
from .errors import ConfigError

METRICS_COLUMNS = ["attack", "eps", "alpha", "n", "roc_auc", "accuracy",
                   "error", "mode"]


# ---------------------------------------------------------------------------
# small artifact helpers


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str, header: list, rows: list, chash: str) -> None:
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    cfg_mod.atomic_write_text(path, buf.getvalue())


def read_csv(path: str) -> tuple:
    with open(path) as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_json(path: str, doc: dict, chash: str) -> None:
    doc = dict(doc)
    doc["config_hash"] = chash
    cfg_mod.atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def checkpoint_hash(path: str) -> str:
    return _file_sha256(path + ".json")[:16] + _file_sha256(path + ".bin")[:16]


# ---------------------------------------------------------------------------
# run context


@dataclass
class RunContext:
    cfg: dict
    seed: int
    out_dir: str
    chash: str
    splits: object

    @property
    def seed_dir(self) -> str:
        return os.path.join(self.out_dir, f"seed{self.seed}")

    def path(self, name: str) -> str:
        return os.path.join(self.seed_dir, name)


def load_splits(cfg: dict):
    ds = cfg["dataset"]
    from . import data
    return data.load_dataset(ds["name"], ds["data_dir"], seed=ds["seed"],
                             **ds.get("options", {}))


def make_context(cfg: dict, seed: int, out_dir: str | None = None) -> RunContext:
    out = out_dir or cfg["output_dir"]
    ctx = RunContext(cfg=cfg, seed=seed, out_dir=out,
                     chash=cfg_mod.config_hash(cfg), splits=load_splits(cfg))
    os.makedirs(ctx.seed_dir, exist_ok=True)
    return ctx


def _save_model(ctx: RunContext, model, stem: str, meta: dict) -> None:
    meta = dict(meta)
    meta["config_hash"] = ctx.chash
    nn.save_checkpoint(model, ctx.path(stem), extra_meta=meta)


def _load_model(ctx: RunContext, stem: str):
    path = ctx.path(stem)
    if not os.path.exists(path + ".json"):
        raise ConfigError(
            f"stage needs {path}.json; run the earlier stage first")
    model, meta = nn.load_checkpoint(path)
    if meta.get("config_hash") != ctx.chash:
        raise ConfigError(
            f"{path} was produced under a different config (hash mismatch)")
    return model


def _seeded_attack(spec: attacks.AttackSpec, seed: int) -> attacks.AttackSpec:
    return replace(spec, seed=spec.seed ^ (seed * 0x9E3779B1 & 0x7FFFFFFF))


def _build_model(ctx: RunContext) -> nn.ModelGraph:
    n_classes = int(ctx.splits.train_y.max()) + 1
    layers = cfg_mod.model_layers(ctx.cfg["model"], n_classes)
    return nn.build_model(layers, ctx.splits.train_x.shape[1:], seed=ctx.seed,
                          quant_bits=ctx.cfg["model"]["quant_bits"])


# ---------------------------------------------------------------------------
# stages


def stage_pretrain(ctx: RunContext) -> nn.ModelGraph:
    model = _build_model(ctx)
    tc = cfg_mod.train_config(ctx.cfg["pretrain"], ctx.seed)
    model = soi.train_crossentropy(model, ctx.splits.train_x, ctx.splits.train_y, tc)
    acc = nn.accuracy(model, ctx.splits.test_x, ctx.splits.test_y)
    _save_model(ctx, model, "pretrain", {"stage": "pretrain", "clean_acc": acc})
    return model


def stage_surrogate(ctx: RunContext) -> nn.ModelGraph:
    sur = ctx.cfg["surrogate"]
    n_classes = int(ctx.splits.train_y.max()) + 1
    layers = cfg_mod.model_layers(ctx.cfg["model"], n_classes)
    model = nn.build_model(layers, ctx.splits.train_x.shape[1:],
                           seed=ctx.seed + sur["seed_offset"],
                           quant_bits=ctx.cfg["model"]["quant_bits"])
    tc = soi.TrainConfig(epochs=sur["epochs"], lr=sur["lr"],
                         batch_size=sur["batch_size"],
                         seed=ctx.seed + sur["seed_offset"])
    model = soi.train_crossentropy(model, ctx.splits.train_x, ctx.splits.train_y, tc)
    acc = nn.accuracy(model, ctx.splits.test_x, ctx.splits.test_y)
    _save_model(ctx, model, "surrogate", {"stage": "surrogate", "clean_acc": acc})
    return model


def stage_phase1(ctx: RunContext, pretrained=None) -> nn.ModelGraph:
    pretrained = pretrained if pretrained is not None else _load_model(ctx, "pretrain")
    p1 = cfg_mod.phase1_config(ctx.cfg["phase1"], ctx.seed)
    p1 = replace(p1, attack=_seeded_attack(p1.attack, ctx.seed))
    model = soi.train_phase1(pretrained, ctx.splits.train_x, ctx.splits.train_y, p1)
    acc = nn.accuracy(model, ctx.splits.test_x, ctx.splits.test_y)
    _save_model(ctx, model, "phase1", {"stage": "phase1", "clean_acc": acc})
    return model


def stage_phase2(ctx: RunContext, model=None) -> nn.ModelGraph:
    model = model if model is not None else _load_model(ctx, "phase1")
    p2 = cfg_mod.phase2_config(ctx.cfg["phase2"], ctx.seed)
    p2 = replace(p2, attack=_seeded_attack(p2.attack, ctx.seed))
    final = soi.train_phase2(model, ctx.splits.train_x, ctx.splits.train_y, p2)
    acc = nn.accuracy(final, ctx.splits.test_x, ctx.splits.test_y)
    _save_model(ctx, final, "final", {"stage": "phase2", "clean_acc": acc})
    return final


def calibration_sois(ctx: RunContext, model, attack_spec) -> tuple:
    """Clean and attacked SoI sets over the training split."""
    x, y = ctx.splits.train_x, ctx.splits.train_y
    d_c = soi.soi_distribution(model, x)
    d_a = soi.soi_distribution(model, x, y, attack=attack_spec)
    return d_c, d_a


def stage_build_lut(ctx: RunContext, model=None) -> detector.SoIProbabilityLUT:
    model = model if model is not None else _load_model(ctx, "final")
    spec = _seeded_attack(
        attacks.attack_from_json(ctx.cfg["lut"]["attack"]), ctx.seed)
    d_c, d_a = calibration_sois(ctx, model, spec)
    lut = detector.build_lut(d_c, d_a, bins=ctx.cfg["lut"]["bins"],
                             smoothing=ctx.cfg["lut"]["smoothing"],
                             meta={"builder_attack": attacks.attack_to_json(spec),
                                   "config_hash": ctx.chash})
    detector.save_lut(lut, ctx.path("lut.json"))
    return lut


def _load_lut(ctx: RunContext) -> detector.SoIProbabilityLUT:
    path = ctx.path("lut.json")
    if not os.path.exists(path):
        raise ConfigError(f"stage needs {path}; run build-lut first")
    lut = detector.load_lut(path)
    if lut.meta.get("config_hash") != ctx.chash:
        raise ConfigError(f"{path} was produced under a different config")
    return lut


def stage_attack(ctx: RunContext, model=None, surrogate=None) -> dict:
    """Generate and store adversarial test sets for every eval attack."""
    model = model if model is not None else _load_model(ctx, "final")
    out = {}
    x, y = ctx.splits.test_x, ctx.splits.test_y
    for spec in cfg_mod.eval_attacks(ctx.cfg):
        spec = _seeded_attack(spec, ctx.seed)
        if spec.surrogate and surrogate is None:
            surrogate = _load_model(ctx, "surrogate")
        xa = attacks.run_attack(model, x, y, spec, surrogate_model=surrogate)
        np.savez_compressed(ctx.path(f"adv_{spec.slug()}.npz"),
                            x_adv=xa, y=y, linf=np.max(np.abs(xa - x)))
        out[spec.slug()] = xa
    return out


def evaluate_model(ctx: RunContext, model, lut, surrogate=None) -> list:
    """Detection metrics rows over the eval attack ladder, plus SoI dumps."""
    x, y = ctx.splits.test_x, ctx.splits.test_y
    soi_clean = soi.soi_distribution(model, x)
    clean_scores, _ = detector.lookup_many(lut, soi_clean)
    correct = (nn.predict(model, x) == y).astype(np.float64)
    write_csv(ctx.path("soi_clean.csv"), ["sample_id", "soi", "attack"],
              [(i, float(v), "clean") for i, v in enumerate(soi_clean)], ctx.chash)

    rows = []
    hist_sets = {"clean": soi_clean}
    for ai, spec0 in enumerate(cfg_mod.eval_attacks(ctx.cfg)):
        spec = _seeded_attack(spec0, ctx.seed)
        if spec.surrogate and surrogate is None:
            surrogate = _load_model(ctx, "surrogate")
        xa = attacks.run_attack(model, x, y, spec, surrogate_model=surrogate)
        soi_adv = soi.soi_distribution(model, xa)
        hist_sets[spec.slug()] = soi_adv
        write_csv(ctx.path(f"soi_adv_{spec.slug()}.csv"),
                  ["sample_id", "soi", "attack"],
                  [(i, float(v), spec.slug()) for i, v in enumerate(soi_adv)],
                  ctx.chash)
        adv_scores, _ = detector.lookup_many(lut, soi_adv)
        auc = detector.roc_auc(clean_scores, adv_scores)
        wrong = (nn.predict(model, xa) != y).astype(np.float64)
        for mode in ctx.cfg["eval"]["modes"]:
            if mode == "threshold":
                acc_c = (clean_scores >= 0.5).astype(np.float64)
                acc_a = (adv_scores >= 0.5).astype(np.float64)
            else:
                draws = ctx.cfg["eval"]["stochastic_draws"]
                rng = np.random.default_rng(ctx.seed * 99991 + ai)
                acc_c = (rng.uniform(size=(draws,) + clean_scores.shape)
                         < clean_scores).mean(axis=0)
                acc_a = (rng.uniform(size=(draws,) + adv_scores.shape)
                         < adv_scores).mean(axis=0)
            rows.append([
                spec.family,
                attacks.format_number(spec.eps),
                attacks.format_number(spec.alpha),
                spec.n,
                float(auc),
                float(np.mean(acc_c * correct)),
                float(np.mean(acc_a * wrong)),
                mode,
            ])
    _write_plotdata(ctx, hist_sets, lut)
    return rows


def _write_plotdata(ctx: RunContext, hist_sets: dict, lut) -> None:
    all_vals = np.concatenate(list(hist_sets.values()))
    edges = np.linspace(float(all_vals.min()), float(all_vals.max()), 41)
    if edges[0] == edges[-1]:
        edges = np.linspace(edges[0] - 0.5, edges[0] + 0.5, 41)
    names = list(hist_sets)
    counts = {k: np.histogram(v, bins=edges)[0] for k, v in hist_sets.items()}
    rows = []
    for i in range(len(edges) - 1):
        rows.append([float(edges[i]), float(edges[i + 1])]
                    + [int(counts[k][i]) for k in names])
    write_csv(ctx.path("plotdata_soi_hist.csv"),
              ["bin_left", "bin_right"] + [f"count_{k}" for k in names],
              rows, ctx.chash)
    write_csv(ctx.path("plotdata_pclean.csv"), ["soi", "p_clean"],
              [(float(s), float(p)) for s, p in zip(lut.samples, lut.probs)],
              ctx.chash)


def stage_evaluate(ctx: RunContext, model=None, lut=None, surrogate=None) -> list:
    model = model if model is not None else _load_model(ctx, "final")
    lut = lut if lut is not None else _load_lut(ctx)
    rows = evaluate_model(ctx, model, lut, surrogate=surrogate)
    write_csv(ctx.path("metrics.csv"), METRICS_COLUMNS, rows, ctx.chash)
    return rows


def stage_simulate_xbar(ctx: RunContext, model=None) -> dict:
    """Replay layer 0 on the configured crossbar and measure hardware AUC."""
    model = model if model is not None else _load_model(ctx, "final")
    xb_cfg = cfg_mod.crossbar_config(ctx.cfg["crossbar"])
    mapped = xbar.map_model_layer0(model, xb_cfg)
    varied = xbar.apply_variation(mapped, seed=ctx.cfg["crossbar"]["seed"] + ctx.seed)
    spec = _seeded_attack(
        attacks.attack_from_json(ctx.cfg["lut"]["attack"]), ctx.seed)

    xtr, ytr = ctx.splits.train_x, ctx.splits.train_y
    xte, yte = ctx.splits.test_x, ctx.splits.test_y
    xa_tr = attacks.run_attack(model, xtr, ytr, spec)
    xa_te = attacks.run_attack(model, xte, yte, spec)
    hw_c_tr, _ = xbar.hardware_soi(varied, xtr)
    hw_a_tr, _ = xbar.hardware_soi(varied, xa_tr)
    hw_c_te, cycles = xbar.hardware_soi(varied, xte)
    hw_a_te, _ = xbar.hardware_soi(varied, xa_te)

    lut_hw = detector.build_lut(hw_c_tr, hw_a_tr, bins=ctx.cfg["lut"]["bins"])
    sc, _ = detector.lookup_many(lut_hw, hw_c_te)
    sa, _ = detector.lookup_many(lut_hw, hw_a_te)
    auc_hw = detector.roc_auc(sc, sa)

    sw_c = soi.soi_distribution(model, xte)
    write_csv(ctx.path("soi_hw_clean.csv"), ["sample_id", "soi", "attack"],
              [(i, float(v), "clean") for i, v in enumerate(hw_c_te)], ctx.chash)
    write_csv(ctx.path("soi_hw_adv.csv"), ["sample_id", "soi", "attack"],
              [(i, float(v), spec.slug()) for i, v in enumerate(hw_a_te)], ctx.chash)
    report = {
        "crossbar": {k: v for k, v in ctx.cfg["crossbar"].items()},
        "attack": attacks.attack_to_json(spec),
        "roc_auc_hw": float(auc_hw),
        "cycles_per_input": int(cycles),
        "mean_abs_soi_gap_vs_software": float(np.mean(np.abs(hw_c_te - sw_c))),
    }
    write_json(ctx.path("xbar_report.json"), report, ctx.chash)
    return report


def stage_energy(ctx: RunContext, model=None, lut=None) -> energy_mod.EnergyReport:
    model = model if model is not None else _load_model(ctx, "final")
    lut = lut if lut is not None else _load_lut(ctx)
    out_shape = nn.output_shapes(model)[0]
    out_h, out_w = (out_shape[1], out_shape[2]) if len(out_shape) == 3 else (1, 1)
    ce = cfg_mod.component_energies(ctx.cfg["energies"])
    soi_vals = soi.soi_distribution(model, ctx.splits.test_x)
    hist = energy_mod.nx_histogram(lut, soi_vals)
    n_x = max(hist) if hist else 1
    report = energy_mod.build_report(ctx.cfg["crossbar"]["cols"],
                                     ctx.cfg["crossbar"]["mux_ratio"],
                                     out_h, out_w, ce, n_x=n_x, nx_hist=hist)
    write_json(ctx.path("energy.json"), report.to_json(), ctx.chash)
    return report


# ---------------------------------------------------------------------------
# whole pipeline and sweeps


def run_seed(cfg: dict, seed: int, out_dir: str | None = None) -> dict:
    ctx = make_context(cfg, seed, out_dir)
    model = stage_pretrain(ctx)
    surrogate = None
    if cfg["surrogate"]["enabled"]:
        surrogate = stage_surrogate(ctx)
    m1 = stage_phase1(ctx, model)
    final = stage_phase2(ctx, m1)
    lut = stage_build_lut(ctx, final)
    rows = stage_evaluate(ctx, final, lut, surrogate=surrogate)
    xb = stage_simulate_xbar(ctx, final)
    en = stage_energy(ctx, final, lut)
    report = {
        "seed": seed,
        "clean_acc_pretrain": nn.load_checkpoint(ctx.path("pretrain"))[1]["clean_acc"],
        "clean_acc_phase1": nn.load_checkpoint(ctx.path("phase1"))[1]["clean_acc"],
        "clean_acc_final": nn.load_checkpoint(ctx.path("final"))[1]["clean_acc"],
        "metrics": [dict(zip(METRICS_COLUMNS, r)) for r in rows],
        "xbar": xb,
        "energy_e_soi_j": en.e_soi,
        "checkpoints": {s: checkpoint_hash(ctx.path(s))
                        for s in ("pretrain", "phase1", "final")},
    }
    write_json(ctx.path("run_report.json"), report, ctx.chash)
    return report


def run_pipeline(cfg: dict, out_dir: str | None = None) -> dict:
    out = out_dir or cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    chash = cfg_mod.config_hash(cfg)
    reports = [run_seed(cfg, s, out) for s in cfg["seeds"]]
    # aggregate metrics: median across seeds for each (attack row, mode)
    per_seed = [r["metrics"] for r in reports]
    agg_rows = []
    for i, row in enumerate(per_seed[0]):
        vals = {k: [float(m[i][k]) for m in per_seed]
                for k in ("roc_auc", "accuracy", "error")}
        agg_rows.append([row["attack"], row["eps"], row["alpha"], row["n"],
                         float(np.median(vals["roc_auc"])),
                         float(np.median(vals["accuracy"])),
                         float(np.median(vals["error"])),
                         row["mode"]])
    write_csv(os.path.join(out, "metrics.csv"), METRICS_COLUMNS, agg_rows, chash)
    top = {"seeds": cfg["seeds"], "runs": reports}
    cfg_mod.atomic_write_text(os.path.join(out, "run_report.json"),
                              json.dumps({**top, "config_hash": chash}, indent=1) + "\n")
    return top


SWEEP_AXES = ("train_strength", "detector_strength", "on_off_ratio",
              "xbar_size", "frac_volume")

_STRENGTH_PRESETS = {
    "weak": {"family": "pgd", "eps": "4/255", "alpha": "2/255", "n": 10},
    "moderate": {"family": "pgd", "eps": "8/255", "alpha": "4/255", "n": 10},
    "strong": {"family": "pgd", "eps": "16/255", "alpha": "8/255", "n": 10},
}

_SWEEP_DEFAULTS = {
    "train_strength": ["weak", "moderate", "strong"],
    "detector_strength": ["weak", "moderate", "strong"],
    "on_off_ratio": [10.0, 100.0],
    "xbar_size": [64, 128],
    "frac_volume": [0.25, 0.5, 1.0],
}


def _auc_for(model, lut, x, y, spec, surrogate=None) -> float:
    sc, _ = detector.lookup_many(lut, soi.soi_distribution(model, x))
    xa = attacks.run_attack(model, x, y, spec, surrogate_model=surrogate)
    sa, _ = detector.lookup_many(lut, soi.soi_distribution(model, xa))
    return detector.roc_auc(sc, sa)


def run_sweep(cfg: dict, axis: str | None = None, out_dir: str | None = None) -> list:
    """One evaluation per axis value per seed; consolidated CSV at the top level."""
    axis = axis or cfg["sweep"]["axis"]
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = cfg["sweep"]["values"] or _SWEEP_DEFAULTS[axis]
    out = out_dir or cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    chash = cfg_mod.config_hash(cfg)
    rows = []
    for seed in cfg["seeds"]:
        ctx = make_context(cfg, seed, os.path.join(out, "sweep_base"))
        pre = stage_pretrain(ctx)
        if axis == "train_strength":
            for v in values:
                p1 = cfg_mod.phase1_config(
                    {**cfg["phase1"], "attack": _STRENGTH_PRESETS[v]}, seed)
                p1 = replace(p1, attack=_seeded_attack(p1.attack, seed))
                m1 = soi.train_phase1(pre, ctx.splits.train_x, ctx.splits.train_y, p1)
                final = soi.train_phase2(
                    m1, ctx.splits.train_x, ctx.splits.train_y,
                    replace(cfg_mod.phase2_config(cfg["phase2"], seed),
                            attack=_seeded_attack(
                                cfg_mod.phase2_config(cfg["phase2"], seed).attack,
                                seed)))
                spec = _seeded_attack(attacks.attack_from_json(
                    cfg["lut"]["attack"]), seed)
                d_c, d_a = calibration_sois(ctx, final, spec)
                lut = detector.build_lut(d_c, d_a, bins=cfg["lut"]["bins"])
                strong = _seeded_attack(attacks.attack_from_json(
                    _STRENGTH_PRESETS["strong"]), seed)
                auc = _auc_for(final, lut, ctx.splits.test_x, ctx.splits.test_y,
                               strong)
                rows.append([axis, v, seed, float(auc)])
        else:
            m1 = stage_phase1(ctx, pre)
            final = stage_phase2(ctx, m1)
            if axis == "detector_strength":
                ladder = [_seeded_attack(s, seed)
                          for s in cfg_mod.eval_attacks(cfg)]
                for v in values:
                    spec = _seeded_attack(attacks.attack_from_json(
                        _STRENGTH_PRESETS[v]), seed)
                    d_c, d_a = calibration_sois(ctx, final, spec)
                    lut = detector.build_lut(d_c, d_a, bins=cfg["lut"]["bins"])
                    aucs = [_auc_for(final, lut, ctx.splits.test_x,
                                     ctx.splits.test_y, s) for s in ladder]
                    rows.append([axis, v, seed, float(min(aucs))])
            elif axis in ("on_off_ratio", "xbar_size"):
                spec = _seeded_attack(attacks.attack_from_json(
                    cfg["lut"]["attack"]), seed)
                for v in values:
                    over = dict(cfg["crossbar"])
                    if axis == "on_off_ratio":
                        over["on_off_ratio"] = float(v)
                    else:
                        over["rows"] = over["cols"] = int(v)
                    auc = _hardware_auc(ctx, final, over, spec)
                    rows.append([axis, v, seed, float(auc)])
            else:  # frac_volume
                d_spec = _seeded_attack(attacks.attack_from_json(
                    cfg["lut"]["attack"]), seed)
                d_c, d_a = calibration_sois(ctx, final, d_spec)
                lut = detector.build_lut(d_c, d_a, bins=cfg["lut"]["bins"])
                for v in values:
                    g = attacks.AttackSpec("gaussian_patch", sigma_noise=0.5,
                                           frac_volume=float(v), seed=seed)
                    auc = _auc_for(final, lut, ctx.splits.test_x,
                                   ctx.splits.test_y, g)
                    rows.append([axis, v, seed, float(auc)])
    write_csv(os.path.join(out, f"sweep_{axis}.csv"),
              ["axis", "value", "seed", "roc_auc"], rows, chash)
    return rows


def _hardware_auc(ctx: RunContext, model, xb_section: dict, spec) -> float:
    xb_cfg = cfg_mod.crossbar_config(xb_section)
    mapped = xbar.map_model_layer0(model, xb_cfg)
    varied = xbar.apply_variation(mapped, seed=xb_section["seed"] + ctx.seed)
    xtr, ytr = ctx.splits.train_x, ctx.splits.train_y
    xte, yte = ctx.splits.test_x, ctx.splits.test_y
    xa_tr = attacks.run_attack(model, xtr, ytr, spec)
    xa_te = attacks.run_attack(model, xte, yte, spec)
    hw_c_tr, _ = xbar.hardware_soi(varied, xtr)
    hw_a_tr, _ = xbar.hardware_soi(varied, xa_tr)
    hw_c_te, _ = xbar.hardware_soi(varied, xte)
    hw_a_te, _ = xbar.hardware_soi(varied, xa_te)
    lut_hw = detector.build_lut(hw_c_tr, hw_a_tr, bins=ctx.cfg["lut"]["bins"])
    sc, _ = detector.lookup_many(lut_hw, hw_c_te)
    sa, _ = detector.lookup_many(lut_hw, hw_a_te)
    return detector.roc_auc(sc, sa)

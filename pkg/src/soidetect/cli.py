"""Command line front end over the pipeline stages.

Every subcommand takes --config (JSON, merged over defaults), an optional
--seed (defaults to the first configured seed; `pipeline` runs all of them)
and an optional --out overriding the configured output directory.  Stage
commands read earlier artifacts from the same directory and refuse to mix
artifacts from different configs.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline, config as cfg_mod, energy
from .errors import ConfigError, DataFormatError, NumericError

STAGES = {
    "pretrain": pipeline.stage_pretrain,
    "phase1": pipeline.stage_phase1,
    "phase2": pipeline.stage_phase2,
    "build-lut": pipeline.stage_build_lut,
    "attack": pipeline.stage_attack,
    "evaluate": pipeline.stage_evaluate,
    "simulate-xbar": pipeline.stage_simulate_xbar,
    "energy": pipeline.stage_energy,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="soidetect",
        description="Train, calibrate and evaluate the current-signature "
                    "adversarial input detector.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file (defaults apply)")
        p.add_argument("--seed", type=int, help="override: run only this seed")
        p.add_argument("--out", help="override the configured output directory")

    for name in STAGES:
        add_common(sub.add_parser(name, help=f"run the {name} stage"))
    add_common(sub.add_parser("pipeline", help="run every stage for every seed"))
    sweep = sub.add_parser("sweep", help="evaluate along one experiment axis")
    add_common(sweep)
    sweep.add_argument("--axis", choices=pipeline.SWEEP_AXES,
                       help="sweep axis (may also come from config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfg_mod.load_config(args.config)
        if args.seed is not None:
            cfg["seeds"] = [args.seed]
        if args.out:
            cfg["output_dir"] = args.out

        if args.command == "pipeline":
            report = pipeline.run_pipeline(cfg)
            for run in report["runs"]:
                print(f"seed {run['seed']}: clean acc {run['clean_acc_final']:.3f}, "
                      f"E_SoI {energy.format_energy(run['energy_e_soi_j'])}")
            print(f"wrote {cfg['output_dir']}/metrics.csv")
            return 0
        if args.command == "sweep":
            rows = pipeline.run_sweep(cfg, axis=args.axis)
            axis = args.axis or cfg["sweep"]["axis"]
            for row in rows:
                print(f"{row[0]}={row[1]} seed={row[2]} roc_auc={row[3]:.4f}")
            print(f"wrote {cfg['output_dir']}/sweep_{axis}.csv")
            return 0

        seed = cfg["seeds"][0]
        ctx = pipeline.make_context(cfg, seed)
        result = STAGES[args.command](ctx)
        if args.command == "evaluate":
            for row in result:
                print(",".join(str(v) for v in row))
        elif args.command == "energy":
            print(json.dumps(result.to_json(), indent=1))
        elif args.command == "simulate-xbar":
            print(json.dumps(result, indent=1))
        else:
            print(f"{args.command} done (seed {seed}) -> {ctx.seed_dir}")
        return 0
    except (ConfigError, DataFormatError) as e:
        print(f"error in {args.command}: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure in {args.command}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

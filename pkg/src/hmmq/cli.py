"""Command line entry point: ``hmmq train|eval|report|validate-config``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import PRESETS, ConfigError, config_from_dict, dump_config, load_config
from .estimators import Q_TIMINGS, T_MODES, CheckpointError
from .experiment import ReportError, emit_report, run_eval, run_train


def _resolve_config(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict({"preset": args.preset or "paper-s4"})
    if args.config and args.preset:
        raise ConfigError("--preset: give either --config or --preset, not both")
    changes = {}
    for name in ("seed", "steps", "t_mode", "q_timing"):
        val = getattr(args, name, None)
        if val is not None:
            changes[name] = val
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _add_common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in model (default paper-s4)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmmq", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run online estimation and Q-learning")
    _add_common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--t-mode", choices=T_MODES)
    p.add_argument("--q-timing", choices=Q_TIMINGS)

    p = sub.add_parser("eval", help="evaluate a checkpoint's policies")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("report", help="split metrics into series and summarize")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--config", help="model for observation-matrix comparison")
    p.add_argument("--preset", choices=sorted(PRESETS))

    p = sub.add_parser("validate-config", help="check a configuration and print it expanded")
    p.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "validate-config":
            sys.stdout.write(dump_config(load_config(args.config)))
        elif args.command == "train":
            cfg = _resolve_config(args)
            res = run_train(cfg)
            print(f"wrote {res.metrics_path} and {res.checkpoint_path}")
        elif args.command == "eval":
            cfg = _resolve_config(args)
            for row in run_eval(args.checkpoint, cfg, out_dir=cfg.out_dir):
                print(" ".join(f"{k}={v:.6g}" for k, v in row.items()))
        elif args.command == "report":
            model = None
            if args.config or args.preset:
                model = _resolve_config(args).model
            rep = emit_report(args.metrics, args.out, args.checkpoint, model)
            sys.stdout.write(rep.text)
    except (ConfigError, ReportError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

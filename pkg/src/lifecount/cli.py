"""Command-line entry point: gen-data, train, report.

One JSON config document describes a whole experiment (domain specs,
training order, mode, loss/model knobs); flags override individual fields.
Failures print a single machine-parsable line `error: <message>` to stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import MODES, RunConfig
from .lifelong import run_lifelong
from .report import write_report
from .synth import generate_domain, load_dataset, save_dataset


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lifecount",
        description="lifelong density counting on synthetic multi-domain data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="materialize the configured domains to disk")
    p_gen.add_argument("--config", required=True, help="run config JSON")
    p_gen.add_argument("--out", help="data root (default: config data_dir)")
    p_gen.add_argument("--force", action="store_true", help="overwrite existing domain directories")

    p_train = sub.add_parser("train", help="run one lifelong/joint training experiment")
    p_train.add_argument("--config", required=True, help="run config JSON")
    p_train.add_argument("--mode", choices=MODES)
    p_train.add_argument("--order", help="comma-separated training order")
    p_train.add_argument("--lambda", dest="lambda_", type=float, help="distillation weight")
    p_train.add_argument("--eta", type=float, help="transport-term weight")
    p_train.add_argument("--gamma", type=float, help="regularizer weight")
    p_train.add_argument("--sigma", type=float, help="ground-truth kernel width")
    p_train.add_argument("--epochs", type=int, help="epochs per domain")
    p_train.add_argument("--seed", type=int, help="run seed (shuffling/augmentation/init)")
    p_train.add_argument(
        "--distill", choices=["feature", "output", "both"], help="which distillation levels are active"
    )
    p_train.add_argument("--unseen", help="domain held out of training, evaluated each step")
    p_train.add_argument("--data", help="data root (default: config data_dir)")
    p_train.add_argument("--out", help="run directory (default: config output_dir)")
    p_train.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")

    p_rep = sub.add_parser("report", help="compute metrics/tables for a finished run")
    p_rep.add_argument("run_dir", help="run directory written by `train`")
    p_rep.add_argument("--compare", help="second run directory for a side-by-side delta table")
    p_rep.add_argument("--plot", action="store_true", help="also write static PNG plots")
    return parser


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.mode is not None:
        cfg.mode = args.mode
    if args.order is not None:
        cfg.order = [x.strip() for x in args.order.split(",") if x.strip()]
    if args.lambda_ is not None:
        cfg.loss.lambda_ = args.lambda_
    if args.eta is not None:
        cfg.loss.eta = args.eta
    if args.gamma is not None:
        cfg.loss.gamma = args.gamma
    if args.sigma is not None:
        cfg.loss.sigma = args.sigma
    if args.epochs is not None:
        cfg.epochs_per_domain = args.epochs
    if args.seed is not None:
        cfg.seed = args.seed
    if args.distill is not None:
        cfg.loss.distill_feature = args.distill in ("feature", "both")
        cfg.loss.distill_output = args.distill in ("output", "both")
    if args.unseen is not None:
        cfg.unseen = args.unseen or None
        cfg.order = [n for n in cfg.order if n != cfg.unseen]
    if args.data is not None:
        cfg.data_dir = args.data
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config)
    for spec in cfg.domains:
        spec.validate()
    root = Path(args.out if args.out is not None else cfg.data_dir)
    targets = [root / "domains" / spec.name for spec in cfg.domains]
    if not args.force:
        for target in targets:
            if target.exists() and any(target.iterdir()):
                raise FileExistsError(f"{target} already exists (use --force to regenerate)")
    for spec, target in zip(cfg.domains, targets):
        save_dataset(generate_domain(spec), target)
        print(f"wrote {target}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    cfg.validate()
    root = Path(cfg.data_dir) / "domains"
    needed = list(cfg.order) + ([cfg.unseen] if cfg.unseen else [])
    datasets = {}
    for name in needed:
        domain_dir = root / name
        if not domain_dir.is_dir():
            raise FileNotFoundError(f"dataset for domain {name!r} not found at {domain_dir} (run gen-data)")
        datasets[name] = load_dataset(domain_dir)
    result = run_lifelong(cfg, datasets, out_dir=cfg.output_dir, force=args.force)
    print(f"run complete: {result.run_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    text = write_report(args.run_dir, compare_dir=args.compare, plot=args.plot)
    print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen-data": cmd_gen_data, "train": cmd_train, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except Exception as exc:  # single-line machine-parsable failure contract
        message = str(exc).replace("\n", " ") or exc.__class__.__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Sweep the plasticity/stability weight lambda on the forgetting benchmark.

Runs the three-domain benchmark at several lambda values (one seed each by
default) and prints the per-step nBwT so the trade-off is visible: lambda=0
is plain sequential fine-tuning, large lambda favors stability.

Usage: python scripts/sweep_lambda.py [--lambdas 0,0.1,0.5,1.0] [--epochs 20]
"""

import argparse
from pathlib import Path

import numpy as np

from lifecount.lifelong import run_lifelong
from lifecount.metrics import mmae, nbwt
from lifecount.presets import forgetting_benchmark_config, forgetting_benchmark_specs
from lifecount.synth import generate_domain


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lambdas", default="0,0.1,0.5,1.0")
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/lambda_sweep")
    args = parser.parse_args()
    lambdas = [float(x) for x in args.lambdas.split(",")]

    print("generating benchmark domains ...")
    datasets = {s.name: generate_domain(s) for s in forgetting_benchmark_specs()}

    print(f"\n{'lambda':>8}{'nBwT_2':>10}{'nBwT_3':>10}{'mMAE':>10}")
    for lam in lambdas:
        cfg = forgetting_benchmark_config(mode="flcb", seed=args.seed, epochs_per_domain=args.epochs)
        cfg.loss.lambda_ = lam
        out_dir = Path(args.out) / f"lambda_{lam:g}"
        res = run_lifelong(cfg, datasets, out_dir=out_dir, force=True)
        row = res.eval.mae[2]
        print(f"{lam:>8g}{nbwt(res.eval, 2):>+10.3f}{nbwt(res.eval, 3):>+10.3f}{mmae(row):>10.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

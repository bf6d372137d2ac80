#!/usr/bin/env python3
"""Desk-scale forgetting replication.

Trains the three-domain benchmark (Poisson means 8/40/100) with the
self-distillation mode and the plain sequential baseline over three seeds,
then prints per-seed and mean nBwT_3 / mMAE. Expected outcome: the
distillation mode forgets less (lower mean nBwT_3) at comparable mMAE.

Usage: python scripts/replicate_forgetting.py [--epochs 20] [--out runs/forgetting]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from lifecount.lifelong import run_lifelong
from lifecount.metrics import mmae, nbwt
from lifecount.presets import forgetting_benchmark_config, forgetting_benchmark_specs
from lifecount.synth import generate_domain


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--seeds", default="0,1,2", help="comma-separated run seeds")
    parser.add_argument("--out", default="runs/forgetting")
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    print("generating benchmark domains ...")
    datasets = {s.name: generate_domain(s) for s in forgetting_benchmark_specs()}

    results: dict[tuple[str, int], tuple[float, float]] = {}
    for mode in ("flcb", "sequential"):
        for seed in seeds:
            cfg = forgetting_benchmark_config(mode=mode, seed=seed, epochs_per_domain=args.epochs)
            out_dir = Path(args.out) / f"{mode}_seed{seed}"
            t0 = time.time()
            res = run_lifelong(cfg, datasets, out_dir=out_dir, force=True)
            nb = nbwt(res.eval, 3)
            mm = mmae(res.eval.mae[2])
            results[(mode, seed)] = (nb, mm)
            print(f"{mode:>10} seed {seed}: nBwT_3 {nb:+.3f}  mMAE {mm:6.2f}  ({time.time() - t0:.0f}s)  -> {out_dir}")

    print("\nmode        mean nBwT_3   mean mMAE")
    for mode in ("flcb", "sequential"):
        nbs = [results[(mode, s)][0] for s in seeds]
        mms = [results[(mode, s)][1] for s in seeds]
        print(f"{mode:<12}{np.mean(nbs):>+11.4f}{np.mean(mms):>12.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

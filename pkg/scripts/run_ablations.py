#!/usr/bin/env python3
"""Run the three hyperparameter sweeps (patch keep ratio, contrastive
weight, fusion mode) on a toy dataset and write one CSV per axis.

    python3 scripts/run_ablations.py --workdir runs/ablations --epochs 6
"""

import argparse
import csv
import sys
from pathlib import Path

from evpr.config import Config
from evpr.dataset import load_dataset, synthesize_toy_dataset
from evpr.trainer import ablate, split_from_config

GRIDS = {
    "rho": [0.15, 0.20, 0.25, 0.30],
    "gamma": [0.10, 0.15, 0.20, 0.25],
    "fusion_mode": ["vision_only", "global", "local", "full"],
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/ablations")
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--axes", nargs="*", default=list(GRIDS), choices=list(GRIDS))
    args = parser.parse_args()

    workdir = Path(args.workdir)
    data_root = workdir / "data"
    if not (data_root / "manifest.csv").exists():
        synthesize_toy_dataset(data_root, n_labels=8, samples_per_label=10, seed=args.seed)

    config = Config()
    config.dataset.root = str(data_root)
    config.train.epochs = args.epochs
    config.train.seed = args.seed
    config.validate()
    samples = load_dataset(data_root)
    split = split_from_config(samples, config)

    for axis in args.axes:
        rows = ablate(samples, split, config, axis, GRIDS[axis])
        out = workdir / f"ablation_{axis}.csv"
        ns = sorted(rows[0]["recall_at"])
        with out.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["value"] + [f"R@{n}" for n in ns])
            for row in rows:
                writer.writerow([row["value"]] + [f"{row['recall_at'][n]:.4f}" for n in ns])
        print(f"== {axis} -> {out}")
        for row in rows:
            cells = "  ".join(f"R@{n} {row['recall_at'][n]:.3f}" for n in ns)
            print(f"   {axis}={row['value']}: {cells}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

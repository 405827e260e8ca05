#!/usr/bin/env python3
"""Synthesize a toy dataset, train with the default recipe, and report
Recall@{1,5,10} on the test split.

    python3 scripts/run_toy_experiment.py --workdir runs/toy --epochs 30
"""

import argparse
import sys
from pathlib import Path

from evpr.config import Config, save_config
from evpr.dataset import load_dataset, synthesize_toy_dataset
from evpr.trainer import evaluate, split_from_config, train


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/toy", help="where data, config and checkpoints go")
    parser.add_argument("--labels", type=int, default=8)
    parser.add_argument("--per-label", type=int, default=10)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--mode", default="full", choices=["vision_only", "global", "local", "full"])
    args = parser.parse_args()

    workdir = Path(args.workdir)
    data_root = workdir / "data"
    if not (data_root / "manifest.csv").exists():
        synthesize_toy_dataset(
            data_root, n_labels=args.labels, samples_per_label=args.per_label, seed=args.seed
        )
        print(f"synthesized {args.labels}x{args.per_label} samples under {data_root}")

    config = Config()
    config.dataset.root = str(data_root)
    config.train.epochs = args.epochs
    config.train.seed = args.seed
    config.train.out_dir = str(workdir / "run")
    config.fusion.mode = args.mode
    config.validate()
    save_config(config, workdir / "config.ini")

    samples = load_dataset(data_root)
    split = split_from_config(samples, config)
    checkpoint, history = train(
        samples, split, config, checkpoint_path=Path(config.train.out_dir) / "checkpoint.pt"
    )
    for h in history:
        print(f"epoch {h['epoch']:3d}  lr {h['lr']:.2e}  loss {h['loss']:.4f}  val R@1 {h['val_recall1']:.3f}")
    print(f"best val R@1 {checkpoint.best_val_recall1:.3f} at epoch {checkpoint.epoch}")

    report = evaluate(samples, split, config, checkpoint)
    print(report.to_json())
    return 0


if __name__ == "__main__":
    sys.exit(main())

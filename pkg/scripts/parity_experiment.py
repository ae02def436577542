#!/usr/bin/env python3
"""Full training-parity sweep: L1 vs L2 normalization on the synthetic task.

Trains the same 6-layer MLP under both norms across matched seeds and prints
per-seed accuracies plus the mean gap.  Writes curves and a JSON summary under
runs/parity_experiment/.

Usage: python3 scripts/parity_experiment.py [--seeds N] [--outdir DIR]
"""

import argparse
import csv
import dataclasses
import json
from pathlib import Path

from l1bn.batchnorm import BnMode
from l1bn.trainer import MlpSpec, SgdConfig, SyntheticTask, run_experiment

TASK = SyntheticTask(classes=10, dim=20, train_per_class=300, test_per_class=100,
                     center_scale=1.0, spread=1.3)
CONFIG = SgdConfig(learning_rate=0.1, epochs=18, batch_size=128,
                   lr_decay_epochs=(12, 16))
HIDDEN = (64, 64, 64, 64, 64)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--outdir", default="runs/parity_experiment")
    args = parser.parse_args()
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    accs = {"l2": [], "l1": []}
    for mode in (BnMode.L2, BnMode.L1):
        for seed in range(args.seeds):
            spec = MlpSpec(in_dim=TASK.dim, hidden=HIDDEN, classes=TASK.classes,
                           bn_mode=mode, seed=seed)
            rec = run_experiment(dataclasses.replace(TASK, seed=seed), spec, CONFIG)
            accs[mode.value].append(rec.final_test_acc)
            with open(outdir / f"{mode.value}_seed{seed}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epoch", "train_loss", "train_acc", "test_acc"])
                writer.writerows(rec.rows())
            print(f"{mode.value} seed={seed}: test acc {rec.final_test_acc:.4f} "
                  f"({rec.wall_time_s:.1f}s)")

    mean_l2 = sum(accs["l2"]) / len(accs["l2"])
    mean_l1 = sum(accs["l1"]) / len(accs["l1"])
    gap_pp = abs(mean_l2 - mean_l1) * 100
    print(f"\nmean acc: L2={mean_l2:.4f}  L1={mean_l1:.4f}  gap={gap_pp:.2f}pp")
    summary = {"acc_l2": accs["l2"], "acc_l1": accs["l1"],
               "mean_acc_l2": mean_l2, "mean_acc_l1": mean_l1, "gap_pp": gap_pp}
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

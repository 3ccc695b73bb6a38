"""Stress test: 90% pruning on a 5% coreset at an aggressive learning rate.

State preservation should keep accuracy up where plain retraining degrades;
the per-seed rows make the unstable seeds visible.
"""

import argparse
import os

import numpy as np

from swast.cli import _write_csv
from swast.engine import OptimizerConfig, SelectorKind, TrainConfig, run_swast
from swast.model import SparsityPlan
from swast.pruning import RigLConfig

from synergy_grid import make_data


def config(seed, use_sp):
    return TrainConfig(
        total_epochs=60,
        selection_interval=5,
        coreset_ratio=0.05,
        sp_weight=0.5,
        use_sp=use_sp,
        selector=SelectorKind.MODERATE,
        rigl=RigLConfig(delta_t=5, drop_fraction_init=0.5,
                        plan=SparsityPlan(target_rate=0.9)),
        optimizer=OptimizerConfig(lr=0.3),
        batch_size=32,
        seed=seed,
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="results/heavy_prune")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for seed in range(args.seeds):
        train, test = make_data(seed)
        for sp in (True, False):
            result = run_swast(config(seed, sp), train, test_set=test)
            rows.append([seed, sp, result.metrics[-1].test_accuracy,
                         result.collapse_count])
    _write_csv(os.path.join(args.out, "stability.csv"),
               ["seed", "use_sp", "test_acc", "collapse_events"], rows)

    on = [r[2] for r in rows if r[1]]
    off = [r[2] for r in rows if not r[1]]
    print(f"mean acc with state preservation {np.mean(on):.4f} "
          f"(min {min(on):.4f}), without {np.mean(off):.4f} (min {min(off):.4f})")
    print(f"wrote {args.out}/stability.csv")


if __name__ == "__main__":
    main()

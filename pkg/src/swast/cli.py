"""Command-line entry points: train, interplay, ablate, gradcheck, inspect.

Exit codes: 0 success, 2 configuration/usage/format problems, 3 runtime
divergence. The SWAST_SEED environment variable overrides every seed source.
"""

import argparse
import math
import os
import sys

import numpy as np

from .config import DataSpec, parse_config
from .data import (
    Dataset,
    SyntheticKind,
    generate_synthetic,
    inject_label_noise,
    load_idx_subset,
)
from .engine import ablation_matrix, run_swast
from .errors import ConfigError, DivergenceError, FormatError, SwastError
from .interplay import IddConfig, idd_sweep, prune_experiment
from .model import SparsityPlan, actual_sparsity, build_mlp
from .nn import Batch, grad_check
from .persist import (
    _atomic_write,
    emit_metrics,
    load_checkpoint,
    save_checkpoint,
)


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(value)
    return f"{value:.9g}"


def _write_csv(path: str, header: list, rows: list):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _class_centers(class_count: int, spread: float, d: int) -> np.ndarray:
    """Evenly spaced class centers on a circle of the given radius (origin pair in 1-D+)."""
    centers = np.zeros((class_count, d))
    for c in range(class_count):
        angle = 2.0 * math.pi * c / class_count
        centers[c, 0] = spread * math.cos(angle)
        if d > 1:
            centers[c, 1] = spread * math.sin(angle)
    return centers


def build_datasets(spec: DataSpec, seed: int) -> tuple[Dataset, Dataset | None]:
    """Materialize (train, test) per the data spec, deterministically in seed."""
    root = np.random.SeedSequence(seed)
    train_seq, test_seq, noise_seq = root.spawn(3)
    if spec.kind == "idx":
        train = load_idx_subset(spec.images_path, spec.labels_path, spec.limit)
        test = None
    else:
        kind = SyntheticKind.BLOBS if spec.kind == "blobs" else SyntheticKind.TWO_MOONS
        centers = (
            _class_centers(spec.class_count, spec.center_spread, spec.d)
            if kind is SyntheticKind.BLOBS
            else None
        )
        train = generate_synthetic(
            kind,
            spec.n,
            spec.class_count,
            np.random.default_rng(train_seq),
            d=spec.d,
            cluster_std=spec.cluster_std,
            centers=centers,
        )
        test = (
            generate_synthetic(
                kind,
                spec.test_n,
                spec.class_count,
                np.random.default_rng(test_seq),
                d=spec.d,
                cluster_std=spec.cluster_std,
                centers=centers,
            )
            if spec.test_n > 0
            else None
        )
    if spec.label_noise > 0.0:
        train = inject_label_noise(train, spec.label_noise, np.random.default_rng(noise_seq))
    return train, test


def _cmd_train(args) -> int:
    cfg, spec = parse_config(args.config)
    cfg = _apply_env_seed(cfg)
    train, test = build_datasets(spec, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    result = run_swast(cfg, train, test_set=test)
    emit_metrics(os.path.join(args.out, "metrics.csv"), result.metrics)
    save_checkpoint(os.path.join(args.out, "final.ckpt"), result.checkpoint)
    final = result.metrics[-1]
    scoped, whole = actual_sparsity(result.model)
    print(
        f"finished {cfg.total_epochs} epochs: "
        f"test_acc={_fmt(final.test_accuracy)} ce={_fmt(final.ce_loss)} "
        f"scoped_sparsity={_fmt(scoped)} whole_sparsity={_fmt(whole)} "
        f"coreset={final.coreset_size}"
    )
    print(f"wrote {args.out}/metrics.csv and {args.out}/final.ckpt")
    return 0


def _cmd_interplay(args) -> int:
    seed = _env_seed_or(args.seed)
    os.makedirs(args.out, exist_ok=True)
    if args.experiment == "runge":
        result = prune_experiment(np.random.default_rng(seed))
        _write_csv(
            os.path.join(args.out, "runge_losses.csv"),
            ["quantity", "value"],
            [
                ["loss_pruned_noisyfit", result["loss_pruned_noisyfit"]],
                ["loss_pruned_cleanfit", result["loss_pruned_cleanfit"]],
                ["loss_unpruned_noisyfit", result["loss_unpruned_noisyfit"]],
                ["loss_unpruned_cleanfit", result["loss_unpruned_cleanfit"]],
            ],
        )
        curves = result["curves"]
        names = ["x", "true", "pruned_noisyfit", "pruned_cleanfit", "unpruned_noisyfit", "unpruned_cleanfit"]
        rows = list(zip(*(curves[name] for name in names)))
        _write_csv(os.path.join(args.out, "runge_curves.csv"), names, rows)
        _write_csv(
            os.path.join(args.out, "runge_samples.csv"),
            ["x", "y", "is_noisy"],
            [[s.x, s.y, s.is_noisy] for s in result["samples"]],
        )
        print(
            f"pruned-fit loss on all points {result['loss_pruned_noisyfit']:.6g} vs "
            f"clean coreset {result['loss_pruned_cleanfit']:.6g}"
        )
    else:
        events = []
        rows = idd_sweep(IddConfig(seed=seed), np.random.default_rng(seed), events=events)
        _write_csv(os.path.join(args.out, "idd_sweep.csv"), ["degree", "idd"], rows)
        floors = sum(1 for e in events if e["kind"] == "denominator_floor")
        print(f"swept degrees 1..{rows[-1][0]}; denominator floor hit {floors} times")
    print(f"wrote results under {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg, spec = parse_config(args.config)
    cfg = _apply_env_seed(cfg)
    train, test = build_datasets(spec, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    rows = ablation_matrix(
        train, cfg, seeds=range(cfg.seed, cfg.seed + args.seeds), test_set=test
    )
    header = [
        "name",
        "prune",
        "coreset",
        "sp",
        "mean_acc",
        "std_acc",
        "mean_final_noise_fraction",
        "collapse_events",
        "n_seeds",
    ]
    _write_csv(
        os.path.join(args.out, "ablation.csv"),
        header,
        [[row[k] for k in header] for row in rows],
    )
    for row in rows:
        print(
            f"{row['name']:>14}: acc {row['mean_acc']:.4f} +/- {row['std_acc']:.4f} "
            f"collapses {row['collapse_events']}"
        )
    print(f"wrote {args.out}/ablation.csv")
    return 0


def _cmd_gradcheck(args) -> int:
    seed = _env_seed_or(args.seed)
    widths_list = [[2, 8, 3], [4, 16, 16, 3], [2, 64, 64, 3]]
    worst = 0.0
    for i, widths in enumerate(widths_list):
        rng = np.random.default_rng(seed + i)
        model = build_mlp(widths, SparsityPlan(target_rate=0.0), rng)
        X = rng.normal(size=(6, widths[0]))
        y = rng.integers(0, widths[-1], size=6)
        err = grad_check(model, Batch(X, y, np.arange(6)))
        worst = max(worst, err)
    print(f"max relative error {worst:.3e}")
    return 0 if worst < 1e-6 else 1


def _cmd_inspect(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    dims = " -> ".join(str(w.shape[1]) for w in ck.weights) + f" -> {ck.weights[-1].shape[0]}"
    active = sum(int(np.count_nonzero(m)) for m in ck.masks)
    total = sum(m.size for m in ck.masks)
    print(f"checkpoint version {ck.version}")
    print(f"epoch {ck.epoch}, optimizer step {ck.step}, scope {ck.prune_scope.value}")
    print(f"layers {dims}")
    print(f"sparsity {1.0 - active / total:.4f} ({total - active} of {total} weights masked)")
    print(f"coreset size {len(ck.coreset_indices)} at alpha {ck.coreset_alpha:g}")
    print(f"preserved logits for {len(ck.preserved)} samples")
    return 0


def _env_seed_or(seed: int) -> int:
    raw = os.environ.get("SWAST_SEED")
    if raw is None:
        return seed
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"SWAST_SEED must be an integer, got {raw!r}") from exc


def _apply_env_seed(cfg):
    seed = _env_seed_or(cfg.seed)
    if seed != cfg.seed:
        from dataclasses import replace

        cfg = replace(cfg, seed=seed)
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swast",
        description="Sparse training with coreset selection and state preservation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training configuration")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)

    p_inter = sub.add_parser("interplay", help="polynomial fitting experiments")
    p_inter.add_argument("--experiment", choices=["runge", "idd"], required=True)
    p_inter.add_argument("--seed", type=int, default=0)
    p_inter.add_argument("--out", required=True)

    p_ablate = sub.add_parser("ablate", help="run the prune/coreset/sp ablation grid")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--seeds", type=int, default=3)
    p_ablate.add_argument("--out", required=True)

    p_grad = sub.add_parser("gradcheck", help="finite-difference audit of backward")
    p_grad.add_argument("--seed", type=int, default=0)

    p_inspect = sub.add_parser("inspect", help="summarize a checkpoint file")
    p_inspect.add_argument("checkpoint")

    return parser


_COMMANDS = {
    "train": _cmd_train,
    "interplay": _cmd_interplay,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "inspect": _cmd_inspect,
}


def cli_main(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; unknown flags and bad values exit 2
        return int(exc.code) if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SwastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()

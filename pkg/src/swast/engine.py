"""Alternating weight-pruning / coreset-selection training loop.

Schedule: warm up on the full data for K epochs; at every later epoch t with
t % R == 0, reselect the coreset and (when state preservation is on) record
its raw logits; every optimizer step runs the composite loss, a RigL mask
update when due, and an SGD-with-momentum update on masked gradients.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
import math

import numpy as np

from .coreset import (
    CoresetState,
    el2n_score,
    el2n_select,
    moderate_select,
    noise_fraction,
    omp_gradmatch,
    per_sample_grads,
)
from .data import Dataset
from .errors import ConfigError, DivergenceError
from .model import (
    PruneScope,
    SparseLayer,
    SparseModel,
    actual_sparsity,
    build_mlp,
)
from .nn import PROB_FLOOR, Batch, _kl_rows, backward, forward, softmax
from .persist import Checkpoint, capture_rng_state, restore_rng
from .pruning import RigLConfig, rigl_update


class Variant(Enum):
    TRIM = "trim"  # prune only the final layer
    CUT = "cut"    # prune the whole network


class SelectorKind(Enum):
    EL2N = "el2n"
    MODERATE = "moderate"
    GRADMATCH_OMP = "gradmatch_omp"


@dataclass
class OptimizerConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True
    cosine_anneal: bool = True


@dataclass
class TrainConfig:
    total_epochs: int = 60
    warmup_epochs: int | None = None  # None resolves to ceil(T * alpha / 2)
    selection_interval: int = 20
    coreset_ratio: float = 1.0
    sp_weight: float = 0.1
    use_sp: bool = True
    variant: Variant = Variant.CUT
    selector: SelectorKind = SelectorKind.EL2N
    rigl: RigLConfig = field(default_factory=RigLConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 128
    seed: int = 0
    hidden_widths: tuple = (64, 64)
    omp_per_class: bool = False

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        if not 0.0 < self.coreset_ratio <= 1.0:
            raise ConfigError("coreset_ratio must be in (0,1]")
        if self.selection_interval < 1:
            raise ConfigError("selection_interval must be >= 1")
        if self.sp_weight < 0.0:
            raise ConfigError("sp_weight must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.warmup_epochs is not None and self.warmup_epochs > self.total_epochs:
            raise ConfigError("warmup_epochs cannot exceed total_epochs")


@dataclass
class PreservedState:
    """Map from sample id to the raw (pre-softmax) logits recorded at selection."""

    logits: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.logits)

    def __contains__(self, sample_id: int) -> bool:
        return sample_id in self.logits


@dataclass
class EpochMetrics:
    epoch: int
    ce_loss: float
    sp_loss: float
    total_loss: float
    test_accuracy: float
    scoped_sparsity: float
    coreset_size: int
    coreset_noise_fraction: float | None
    selection_event: bool


@dataclass
class OptState:
    """SGD momentum buffers and the global step counter."""

    vel_w: list
    vel_b: list
    step: int = 0

    @staticmethod
    def fresh(model: SparseModel) -> "OptState":
        return OptState(
            [np.zeros_like(l.W) for l in model.layers],
            [np.zeros_like(l.b) for l in model.layers],
        )


@dataclass
class RunResult:
    model: SparseModel
    metrics: list
    checkpoint: Checkpoint
    events: list
    collapse_count: int = 0


def default_warmup(total_epochs: int, alpha: float) -> int:
    """ceil(T * alpha / 2), clamped to at least one epoch."""
    return max(1, math.ceil(total_epochs * alpha / 2.0))


def record_state(model: SparseModel, coreset: CoresetState, dataset: Dataset) -> PreservedState:
    """Raw logits of every coreset sample under the current parameters."""
    if coreset.size == 0:
        raise ConfigError("cannot record state for an empty coreset")
    batch = Batch(
        dataset.features[coreset.indices], dataset.labels[coreset.indices], coreset.indices
    )
    logits, _ = forward(model, batch)
    return PreservedState(
        {int(i): logits[row].copy() for row, i in enumerate(coreset.indices)}
    )


def _losses_and_grad(
    model: SparseModel,
    batch: Batch,
    preserved: PreservedState | None,
    sp_weight: float,
    events: list | None = None,
):
    """Shared loss/gradient path: (total, ce, sp, dlogits, cache).

    sp is the batch mean of KL(softmax(z_i) || softmax(f(x_i))) over rows whose
    ids were recorded; rows without a recorded state contribute 0. Gradients
    treat the stored logits as constants.
    """
    n = len(batch)
    logits, cache = forward(model, batch)
    if not np.all(np.isfinite(logits)):
        # clamped CE/KL keep the scalar loss finite, so blown-up parameters
        # surface here first
        raise DivergenceError("non-finite logits in the forward pass")
    probs = softmax(logits)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(n), batch.labels] = 1.0
    picked = probs[np.arange(n), batch.labels]
    ce = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    dlogits = (probs - one_hot) / n

    sp = 0.0
    if preserved is not None and len(preserved) > 0:
        rows = [r for r, i in enumerate(batch.sample_ids) if int(i) in preserved]
        if len(rows) < n and events is not None:
            events.append(
                {"kind": "sp_missing_ids", "missing": int(n - len(rows))}
            )
        if rows:
            rows = np.asarray(rows)
            z = np.stack([preserved.logits[int(batch.sample_ids[r])] for r in rows])
            p_ref = softmax(z)
            sp = float(_kl_rows(p_ref, probs[rows]).sum() / n)
            dlogits[rows] += sp_weight * (probs[rows] - p_ref) / n
    total = ce + sp_weight * sp
    return total, ce, sp, dlogits, cache


def composite_loss(
    model: SparseModel,
    batch: Batch,
    preserved: PreservedState | None,
    sp_weight: float,
    events: list | None = None,
) -> tuple[float, float, float]:
    """(total, ce_part, sp_part) of the composite objective on one batch."""
    total, ce, sp, _, _ = _losses_and_grad(model, batch, preserved, sp_weight, events)
    return total, ce, sp


def _epoch_lr(cfg: TrainConfig, t_epoch: int) -> float:
    base = cfg.optimizer.lr
    if not cfg.optimizer.cosine_anneal:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * (t_epoch - 1) / cfg.total_epochs))


def _resolved_rigl(cfg: TrainConfig, dataset_n: int) -> RigLConfig:
    """Fill in t_end (75% of planned steps) and derive the plan scope from the variant."""
    plan = replace(
        cfg.rigl.plan,
        scope=PruneScope.FC_ONLY if cfg.variant is Variant.TRIM else PruneScope.FULL_NETWORK,
    )
    t_end = cfg.rigl.t_end
    if t_end is None:
        k = resolve_warmup(cfg)
        full_steps = math.ceil(dataset_n / cfg.batch_size)
        sel_n = math.ceil(cfg.coreset_ratio * dataset_n)
        sel_steps = math.ceil(sel_n / cfg.batch_size)
        total_steps = k * full_steps + (cfg.total_epochs - k) * sel_steps
        t_end = max(cfg.rigl.delta_t, round(0.75 * total_steps))
    return replace(cfg.rigl, t_end=t_end, plan=plan)


def resolve_warmup(cfg: TrainConfig) -> int:
    k = (
        cfg.warmup_epochs
        if cfg.warmup_epochs is not None
        else default_warmup(cfg.total_epochs, cfg.coreset_ratio)
    )
    return max(1, min(k, cfg.total_epochs))


def evaluate_accuracy(model: SparseModel, dataset: Dataset) -> float:
    logits, _ = forward(
        model, Batch(dataset.features, dataset.labels, np.arange(dataset.n))
    )
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels))


def train_epoch(
    model: SparseModel,
    coreset: CoresetState,
    dataset: Dataset,
    preserved: PreservedState | None,
    cfg: TrainConfig,
    t_epoch: int,
    rng: np.random.Generator,
    opt: OptState | None = None,
    rigl_cfg: RigLConfig | None = None,
    test_set: Dataset | None = None,
    noise_flags: np.ndarray | None = None,
    selection_event: bool = False,
    events: list | None = None,
) -> EpochMetrics:
    """One pass over the coreset in shuffled mini-batches.

    Per step: composite loss and gradients, a RigL mask update when the step
    counter is due (momentum at dropped positions is cleared), then an SGD
    update with nesterov momentum and weight decay on masked gradients only.
    A non-finite loss raises DivergenceError after recording an event.
    """
    if opt is None:
        opt = OptState.fresh(model)
    if rigl_cfg is None:
        rigl_cfg = _resolved_rigl(cfg, dataset.n)
    mu = cfg.optimizer.momentum
    wd = cfg.optimizer.weight_decay
    lr = _epoch_lr(cfg, t_epoch)
    prune_active = rigl_cfg.plan.target_rate > 0.0 and rigl_cfg.drop_fraction_init > 0.0

    order = rng.permutation(coreset.indices)
    ce_sum = sp_sum = total_sum = 0.0
    seen = 0
    for start in range(0, order.size, cfg.batch_size):
        ids = order[start : start + cfg.batch_size]
        batch = Batch(dataset.features[ids], dataset.labels[ids], ids)
        try:
            total, ce, sp, dlogits, cache = _losses_and_grad(
                model, batch, preserved if cfg.use_sp else None, cfg.sp_weight, events
            )
            if not np.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss {total} at epoch {t_epoch}, step {opt.step + 1}"
                )
        except DivergenceError:
            if events is not None:
                events.append(
                    {"kind": "divergence", "epoch": t_epoch, "step": opt.step + 1}
                )
            raise
        grads = backward(model, cache, dlogits)

        opt.step += 1
        if (
            prune_active
            and opt.step % rigl_cfg.delta_t == 0
            and opt.step <= rigl_cfg.t_end
        ):
            step_events = rigl_update(model, grads, opt.step, rigl_cfg, rng)
            if events is not None:
                for ev in step_events:
                    ev["epoch"] = t_epoch
                    events.append(ev)
            for vel, layer in zip(opt.vel_w, model.layers):
                vel *= layer.M  # dropped positions forget their momentum

        for layer, gW, gb, vw, vb in zip(
            model.layers, grads.dW, grads.db, opt.vel_w, opt.vel_b
        ):
            g = (gW + wd * layer.W) * layer.M
            vw *= mu
            vw += g
            layer.W -= lr * (g + mu * vw) if cfg.optimizer.nesterov else lr * vw
            gb_eff = gb + wd * layer.b
            vb *= mu
            vb += gb_eff
            layer.b -= lr * (gb_eff + mu * vb) if cfg.optimizer.nesterov else lr * vb
            layer.enforce_mask()

        n_b = len(batch)
        ce_sum += ce * n_b
        sp_sum += sp * n_b
        total_sum += total * n_b
        seen += n_b

    scoped, _ = actual_sparsity(model)
    return EpochMetrics(
        epoch=t_epoch,
        ce_loss=ce_sum / max(seen, 1),
        sp_loss=sp_sum / max(seen, 1),
        total_loss=total_sum / max(seen, 1),
        test_accuracy=evaluate_accuracy(model, test_set) if test_set is not None else float("nan"),
        scoped_sparsity=scoped,
        coreset_size=coreset.size,
        coreset_noise_fraction=(
            noise_fraction(coreset, noise_flags) if noise_flags is not None else None
        ),
        selection_event=selection_event,
    )


def _run_selector(
    cfg: TrainConfig, model: SparseModel, dataset: Dataset, t_epoch: int, events: list | None
) -> CoresetState:
    if cfg.selector is SelectorKind.EL2N:
        table = el2n_score(model, dataset)
        return el2n_select(table, cfg.coreset_ratio, t_epoch, cfg.total_epochs)
    if cfg.selector is SelectorKind.MODERATE:
        return moderate_select(model, dataset, cfg.coreset_ratio)
    grads = per_sample_grads(model, dataset)
    return omp_gradmatch(
        grads,
        cfg.coreset_ratio,
        per_class=cfg.omp_per_class,
        labels=dataset.labels if cfg.omp_per_class else None,
        events=events,
    )


def _full_coreset(n: int) -> CoresetState:
    return CoresetState(np.arange(n, dtype=np.int64), np.ones(n), 1.0)


def _make_checkpoint(
    model: SparseModel,
    opt: OptState,
    coreset: CoresetState,
    preserved: PreservedState | None,
    rng: np.random.Generator,
    epoch: int,
) -> Checkpoint:
    return Checkpoint(
        epoch=epoch,
        step=opt.step,
        prune_scope=model.prune_scope,
        weights=[l.W.copy() for l in model.layers],
        biases=[l.b.copy() for l in model.layers],
        masks=[l.M.copy() for l in model.layers],
        vel_w=[v.copy() for v in opt.vel_w],
        vel_b=[v.copy() for v in opt.vel_b],
        coreset_indices=coreset.indices.copy(),
        coreset_weights=coreset.weights.copy(),
        coreset_alpha=coreset.alpha,
        preserved={k: v.copy() for k, v in (preserved.logits if preserved else {}).items()},
        rng_state=capture_rng_state(rng),
    )


def run_swast(
    cfg: TrainConfig,
    dataset: Dataset,
    test_set: Dataset | None = None,
    noise_flags: np.ndarray | None = None,
    resume_from: Checkpoint | None = None,
    stop_epoch: int | None = None,
    events: list | None = None,
) -> RunResult:
    """Full training run; deterministic given (cfg, dataset, seed).

    The coreset starts as the full dataset. Selection fires at epochs t with
    t > K and t % R == 0 whenever coreset_ratio < 1; state recording follows
    selection immediately (new coreset, current weights) when use_sp is set.
    An empty selector result falls back to the previous coreset with an event.
    stop_epoch halts after that epoch; the returned checkpoint resumes the run
    bit-exactly via resume_from.
    """
    if events is None:
        events = []
    if noise_flags is None and dataset.noise_flags is not None:
        noise_flags = dataset.noise_flags
    k_warm = resolve_warmup(cfg)
    rigl_cfg = _resolved_rigl(cfg, dataset.n)

    if resume_from is None:
        rng = np.random.default_rng(cfg.seed)
        widths = [dataset.dim, *cfg.hidden_widths, dataset.class_count]
        model = build_mlp(widths, rigl_cfg.plan, rng)
        opt = OptState.fresh(model)
        coreset = _full_coreset(dataset.n)
        preserved = None
        start_epoch = 0
    else:
        ck = resume_from
        model = SparseModel(
            [
                SparseLayer(w.copy(), b.copy(), m.copy())
                for w, b, m in zip(ck.weights, ck.biases, ck.masks)
            ],
            ck.prune_scope,
        )
        opt = OptState([v.copy() for v in ck.vel_w], [v.copy() for v in ck.vel_b], ck.step)
        coreset = CoresetState(
            ck.coreset_indices.copy(), ck.coreset_weights.copy(), ck.coreset_alpha
        )
        # an uninterrupted run has no recorded state before the first selection
        preserved = (
            PreservedState({k: v.copy() for k, v in ck.preserved.items()})
            if ck.preserved
            else None
        )
        rng = restore_rng(ck.rng_state)
        start_epoch = ck.epoch

    metrics: list[EpochMetrics] = []
    last_epoch = min(stop_epoch, cfg.total_epochs) if stop_epoch else cfg.total_epochs
    joint_epochs = []
    for t_epoch in range(start_epoch + 1, last_epoch + 1):
        selection = (
            t_epoch > k_warm
            and t_epoch % cfg.selection_interval == 0
            and cfg.coreset_ratio < 1.0
        )
        if selection:
            new_state = _run_selector(cfg, model, dataset, t_epoch, events)
            if new_state.size == 0:
                events.append({"kind": "empty_selection", "epoch": t_epoch})
            else:
                coreset = new_state
            if cfg.use_sp:
                preserved = record_state(model, coreset, dataset)
        m = train_epoch(
            model,
            coreset,
            dataset,
            preserved,
            cfg,
            t_epoch,
            rng,
            opt=opt,
            rigl_cfg=rigl_cfg,
            test_set=test_set,
            noise_flags=noise_flags,
            selection_event=selection,
            events=events,
        )
        metrics.append(m)
        pruned_this_epoch = any(
            ev.get("kind") == "rigl_update" and ev.get("epoch") == t_epoch for ev in events
        )
        if selection and pruned_this_epoch:
            joint_epochs.append(t_epoch)

    collapse_count = 0
    if test_set is not None:
        acc = {m.epoch: m.test_accuracy for m in metrics}
        for e in joint_epochs:
            if e - 1 in acc and acc[e - 1] - acc[e] > 0.20:
                collapse_count += 1
                events.append(
                    {
                        "kind": "collapse",
                        "epoch": e,
                        "drop": acc[e - 1] - acc[e],
                    }
                )

    checkpoint = _make_checkpoint(model, opt, coreset, preserved, rng, last_epoch)
    return RunResult(model, metrics, checkpoint, events, collapse_count)


def ablation_matrix(
    dataset: Dataset,
    base_cfg: TrainConfig,
    seeds,
    test_set: Dataset | None = None,
    noise_flags: np.ndarray | None = None,
) -> list[dict]:
    """The 6 meaningful cells of {prune} x {coreset} x {sp on/off where coreset is on}.

    Returns one summary row per cell with mean/std final accuracy, mean final
    coreset noise fraction (when flags are known), and total collapse events.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("ablation needs at least 2 seeds")
    cells = [
        {"name": "standard", "prune": False, "coreset": False, "sp": False},
        {"name": "prune_only", "prune": True, "coreset": False, "sp": False},
        {"name": "coreset_only", "prune": False, "coreset": True, "sp": False},
        {"name": "coreset_sp", "prune": False, "coreset": True, "sp": True},
        {"name": "swast_nosp", "prune": True, "coreset": True, "sp": False},
        {"name": "swast_sp", "prune": True, "coreset": True, "sp": True},
    ]
    rows = []
    for cell in cells:
        accs, noise_fracs, collapses = [], [], 0
        for seed in seeds:
            plan = base_cfg.rigl.plan
            if not cell["prune"]:
                plan = replace(plan, target_rate=0.0)
            cfg = replace(
                base_cfg,
                seed=seed,
                coreset_ratio=base_cfg.coreset_ratio if cell["coreset"] else 1.0,
                use_sp=cell["sp"],
                rigl=replace(base_cfg.rigl, plan=plan),
            )
            result = run_swast(cfg, dataset, test_set=test_set, noise_flags=noise_flags)
            final = result.metrics[-1]
            accs.append(final.test_accuracy)
            if final.coreset_noise_fraction is not None:
                noise_fracs.append(final.coreset_noise_fraction)
            collapses += result.collapse_count
        rows.append(
            {
                **{k: cell[k] for k in ("name", "prune", "coreset", "sp")},
                "mean_acc": float(np.mean(accs)),
                "std_acc": float(np.std(accs)),
                "mean_final_noise_fraction": (
                    float(np.mean(noise_fracs)) if noise_fracs else None
                ),
                "collapse_events": collapses,
                "n_seeds": len(seeds),
            }
        )
    return rows

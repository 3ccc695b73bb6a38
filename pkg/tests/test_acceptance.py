"""End-to-end acceptance checks, one numbered PASS/FAIL line per criterion.

Every check prints its verdict before asserting so the full scorecard is
visible in the captured output of a verbose run. All runs are deterministic
in their pinned seeds, so the margins reported here are reproducible bit for
bit on any machine with the same BLAS-free einsum path.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from swast.coreset import el2n_score, moderate_select, omp_gradmatch
from swast.data import (
    Dataset,
    SyntheticKind,
    generate_synthetic,
    inject_label_noise,
)
from swast.engine import (
    OptimizerConfig,
    SelectorKind,
    TrainConfig,
    composite_loss,
    default_warmup,
    record_state,
    run_swast,
)
from swast.interplay import IddConfig, idd_sweep, prune_experiment
from swast.model import PruneScope, SparseLayer, SparseModel, SparsityPlan, build_mlp
from swast.nn import Batch, Gradients, forward, grad_check
from swast.persist import emit_metrics, load_checkpoint, save_checkpoint
from swast.pruning import RigLConfig, f_decay, rigl_update

from conftest import dense_mlp, random_batch, toy_dataset


def report(num: int, ok: bool, detail: str):
    print(f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


def make_data(seed: int) -> tuple[Dataset, Dataset]:
    """Two overlapping gaussian blobs with 10% label noise; fixed per-seed split."""
    root = np.random.SeedSequence(1000 + seed)
    s1, s2, s3 = root.spawn(3)
    centers = np.array([[-1.0, 0.0], [1.0, 0.0]])
    train = generate_synthetic(
        SyntheticKind.BLOBS, 2000, 2, np.random.default_rng(s1),
        d=2, cluster_std=1.0, centers=centers,
    )
    train = inject_label_noise(train, 0.1, np.random.default_rng(s3))
    test = generate_synthetic(
        SyntheticKind.BLOBS, 1000, 2, np.random.default_rng(s2),
        d=2, cluster_std=1.0, centers=centers,
    )
    return train, test


def synergy_cfg(alpha: float, seed: int, prune: bool, use_sp: bool) -> TrainConfig:
    return TrainConfig(
        total_epochs=60,
        selection_interval=5,
        coreset_ratio=alpha,
        use_sp=use_sp,
        selector=SelectorKind.MODERATE,
        rigl=RigLConfig(delta_t=5, plan=SparsityPlan(target_rate=0.5 if prune else 0.0)),
        batch_size=32,
        seed=seed,
    )


@pytest.fixture(scope="module")
def synergy_runs():
    """Criteria 6 and 7 share these runs: SWaST vs coreset-only at two ratios."""
    t0 = time.perf_counter()
    out = {}
    for seed in range(5):
        train, test = make_data(seed)
        for alpha in (0.05, 0.10):
            for name, prune, sp in (("swast", True, True), ("coreset", False, False)):
                cfg = synergy_cfg(alpha, seed, prune, sp)
                result = run_swast(cfg, train, test_set=test)
                out[(alpha, name, seed)] = result.metrics[-1]
    out["elapsed"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="module")
def heavy_prune_runs():
    """Criterion 8: 90% pruning at a destabilizing learning rate, SP on vs off."""
    t0 = time.perf_counter()
    out = {}
    for seed in range(10):
        train, test = make_data(seed)
        for sp in (True, False):
            cfg = TrainConfig(
                total_epochs=60,
                selection_interval=5,
                coreset_ratio=0.05,
                sp_weight=0.5,
                use_sp=sp,
                selector=SelectorKind.MODERATE,
                rigl=RigLConfig(
                    delta_t=5, drop_fraction_init=0.5,
                    plan=SparsityPlan(target_rate=0.9),
                ),
                optimizer=OptimizerConfig(lr=0.3),
                batch_size=32,
                seed=seed,
            )
            result = run_swast(cfg, train, test_set=test)
            out[(sp, seed)] = (result.metrics[-1].test_accuracy, result.collapse_count)
    out["elapsed"] = time.perf_counter() - t0
    return out


def test_criterion_1_gradient_audit():
    widths_cycle = [[2, 16, 3], [2, 64, 64, 3], [2, 32, 32, 2], [2, 8, 3]]
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        widths = widths_cycle[i % len(widths_cycle)]
        model = dense_mlp(widths, seed=100 + i)
        batch = random_batch(6, widths[0], widths[-1], seed=200 + i)
        worst = max(worst, grad_check(model, batch))
    dt = time.perf_counter() - t0
    ok = worst < 1e-6 and dt < 30.0
    report(1, ok, f"20 models, max relative error {worst:.2e}, {dt:.1f}s")


def test_criterion_2_mask_update_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    conserved = grown_at_zero = True
    calls = 0
    for m in range(10):
        plan = SparsityPlan(target_rate=0.6)
        model = build_mlp([4, 16, 16, 3], plan, np.random.default_rng(m))
        cfg = RigLConfig(delta_t=5, t_end=5000, drop_fraction_init=0.3, plan=plan)
        for k in range(100):
            grads = Gradients(
                [rng.normal(size=l.W.shape) for l in model.layers],
                [rng.normal(size=l.b.shape) for l in model.layers],
            )
            before = [(l.M.copy(), int(l.M.sum())) for l in model.layers]
            rigl_update(model, grads, 5 * (k + 1), cfg, rng)
            calls += 1
            for layer, (m0, c0) in zip(model.layers, before):
                if int(layer.M.sum()) != c0:
                    conserved = False
                grown = (layer.M == 1.0) & (m0 == 0.0)
                if grown.any() and not np.all(layer.W[grown] == 0.0):
                    grown_at_zero = False
    alpha, t_end = 0.3, 400
    decay_grid = [f_decay(t, alpha, t_end) for t in range(0, t_end + 1, 10)]
    decay_ok = (
        f_decay(0, alpha, t_end) == alpha
        and f_decay(t_end, alpha, t_end) == 0.0
        and all(a >= b for a, b in zip(decay_grid, decay_grid[1:]))
    )
    dt = time.perf_counter() - t0
    ok = conserved and grown_at_zero and decay_ok and calls == 1000 and dt < 10.0
    report(2, ok, f"{calls} calls, conserved={conserved}, "
                  f"grown_at_zero={grown_at_zero}, decay_ok={decay_ok}, {dt:.1f}s")


def test_criterion_3_selector_oracles():
    t0 = time.perf_counter()
    # greedy matching picks must equal the exhaustive argmax at every step
    omp_ok = True
    for i in range(100):
        rng = np.random.default_rng(3000 + i)
        n = int(rng.integers(2, 13))
        p = int(rng.integers(1, 5))
        G = rng.normal(size=(n, p))
        trace = []
        omp_gradmatch(G, float(rng.uniform(0.3, 1.0)), trace=trace)
        available = np.ones(n, dtype=bool)
        if not np.array_equal(trace[0][0], G.mean(axis=0)):
            omp_ok = False
        for resid, pick in trace:
            scores = np.abs(G @ resid)
            scores[~available] = -np.inf
            if pick != int(np.argmax(scores)):
                omp_ok = False
            available[pick] = False

    # saturated and uniform softmax outputs give exact margin scores
    def bias_model(n_in, biases):
        biases = np.asarray(biases, dtype=np.float64)
        W = np.zeros((biases.size, n_in))
        return SparseModel([SparseLayer(W, biases, np.zeros_like(W))],
                           PruneScope.FULL_NETWORK)

    two = Dataset(np.zeros((2, 1)), np.array([0, 1]), 2, "pair")
    s = el2n_score(bias_model(1, [1000.0, 0.0]), two).scores
    ten = Dataset(np.zeros((1, 1)), np.array([3]), 10, "single")
    u = el2n_score(bias_model(1, [0.0] * 10), ten).scores
    el2n_ok = abs(s[0]) <= 1e-12 and abs(s[1] - 2.0) <= 1e-12 and abs(u[0] - 0.9) <= 1e-12

    # median-distance hand case: distances (1, 0, 1) from center 1, tie breaks low
    l1 = SparseLayer(np.array([[1.0]]), np.zeros(1), np.ones((1, 1)))
    l2 = SparseLayer(np.ones((2, 1)), np.zeros(2), np.ones((2, 1)))
    embed = SparseModel([l1, l2], PruneScope.FULL_NETWORK)
    hand = Dataset(np.array([[0.0], [1.0], [2.0]]), np.array([0, 0, 0]), 2, "hand")
    moderate_ok = moderate_select(embed, hand, alpha=1.0 / 3.0).indices.tolist() == [0]

    dt = time.perf_counter() - t0
    ok = omp_ok and el2n_ok and moderate_ok and dt < 10.0
    report(3, ok, f"omp_argmax={omp_ok}, el2n_exact={el2n_ok}, "
                  f"median_case={moderate_ok}, {dt:.1f}s")


def test_criterion_4_coefficient_pruning_needs_clean_fits():
    t0 = time.perf_counter()
    noisy_med, clean_med, wins = [], [], 0
    for s in range(1000, 1020):
        result = prune_experiment(np.random.default_rng(s))
        noisy_med.append(result["loss_pruned_noisyfit"])
        clean_med.append(result["loss_pruned_cleanfit"])
        if result["loss_pruned_noisyfit"] > result["loss_pruned_cleanfit"]:
            wins += 1
    med_noisy = float(np.median(noisy_med))
    med_clean = float(np.median(clean_med))
    dt = time.perf_counter() - t0
    ok = med_noisy > med_clean and wins >= 15 and dt < 5.0
    report(4, ok, f"median loss {med_noisy:.3f} vs {med_clean:.3f} on clean fits, "
                  f"{wins}/20 seeds, {dt:.1f}s")


def test_criterion_5_divergence_grows_with_degree():
    t0 = time.perf_counter()
    passing = 0
    rhos = []
    for seed in range(5):
        rows = idd_sweep(IddConfig(seed=seed), np.random.default_rng(seed))
        ks = [k for k, _ in rows]
        logs = [math.log10(max(v, 1e-300)) for _, v in rows]
        rho = float(spearmanr(ks, logs).statistic)
        rhos.append(rho)
        if rho >= 0.8:
            passing += 1
    dt = time.perf_counter() - t0
    ok = passing >= 4 and dt < 120.0
    report(5, ok, f"spearman >= 0.8 on {passing}/5 seeds "
                  f"(min {min(rhos):.3f}), {dt:.1f}s")


def test_criterion_6_joint_training_beats_coreset_only(synergy_runs):
    gains = {}
    detail = []
    for alpha in (0.05, 0.10):
        swast = float(np.mean([synergy_runs[(alpha, "swast", s)].test_accuracy
                               for s in range(5)]))
        coreset = float(np.mean([synergy_runs[(alpha, "coreset", s)].test_accuracy
                                 for s in range(5)]))
        gains[alpha] = swast - coreset
        detail.append(f"alpha={alpha:.2f}: {swast:.4f} vs {coreset:.4f}")
    dt = synergy_runs["elapsed"]
    ok = gains[0.05] >= 0.0 and gains[0.10] >= 0.0 and gains[0.05] >= gains[0.10] and dt < 600.0
    report(6, ok, "; ".join(detail) + f"; gains {gains[0.05]:.4f} >= {gains[0.10]:.4f}, {dt:.1f}s")


def test_criterion_7_pruning_filters_noisy_samples(synergy_runs):
    wins = 0
    for s in range(5):
        swast_nf = synergy_runs[(0.10, "swast", s)].coreset_noise_fraction
        coreset_nf = synergy_runs[(0.10, "coreset", s)].coreset_noise_fraction
        if swast_nf <= coreset_nf:
            wins += 1
    dt = synergy_runs["elapsed"]
    ok = wins >= 4 and dt < 600.0
    report(7, ok, f"final coreset noise fraction lower or equal on {wins}/5 seeds, "
                  f"{dt:.1f}s (shared runs)")


def test_criterion_8_state_preservation_stabilizes_heavy_pruning(heavy_prune_runs):
    acc_on = float(np.mean([heavy_prune_runs[(True, s)][0] for s in range(10)]))
    acc_off = float(np.mean([heavy_prune_runs[(False, s)][0] for s in range(10)]))
    col_on = sum(heavy_prune_runs[(True, s)][1] for s in range(10))
    col_off = sum(heavy_prune_runs[(False, s)][1] for s in range(10))
    dt = heavy_prune_runs["elapsed"]
    ok = acc_on >= acc_off and col_off >= col_on and dt < 1200.0
    report(8, ok, f"mean acc {acc_on:.4f} (sp on) vs {acc_off:.4f} (sp off), "
                  f"collapses {col_off} >= {col_on}, {dt:.1f}s")


def test_criterion_9_schedule_and_persistence(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    train = generate_synthetic(SyntheticKind.BLOBS, 200, 2, rng, d=2, cluster_std=0.8)
    test = generate_synthetic(SyntheticKind.BLOBS, 100, 2, rng, d=2, cluster_std=0.8)
    cfg = TrainConfig(
        total_epochs=24,
        warmup_epochs=3,
        selection_interval=4,
        coreset_ratio=0.25,
        selector=SelectorKind.MODERATE,
        rigl=RigLConfig(delta_t=5, plan=SparsityPlan(target_rate=0.5)),
        batch_size=32,
        seed=0,
    )

    a = run_swast(cfg, train, test_set=test)
    sel = [m.epoch for m in a.metrics if m.selection_event]
    schedule_ok = sel == [t for t in range(1, 25) if t > 3 and t % 4 == 0]

    b = run_swast(cfg, train, test_set=test)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_metrics(str(pa), a.metrics)
    emit_metrics(str(pb), b.metrics)
    csv_ok = pa.read_bytes() == pb.read_bytes()

    ck_path = tmp_path / "final.ckpt"
    save_checkpoint(str(ck_path), a.checkpoint)
    loaded = load_checkpoint(str(ck_path))
    ck2_path = tmp_path / "resaved.ckpt"
    save_checkpoint(str(ck2_path), loaded)
    roundtrip_ok = ck_path.read_bytes() == ck2_path.read_bytes() and all(
        np.array_equal(w1, w2, equal_nan=True)
        for w1, w2 in zip(a.checkpoint.weights, loaded.weights)
    )

    head = run_swast(cfg, train, test_set=test, stop_epoch=10)
    tail = run_swast(cfg, train, test_set=test, resume_from=head.checkpoint)
    pr = tmp_path / "resumed.ckpt"
    save_checkpoint(str(pr), tail.checkpoint)
    resume_ok = (
        pr.read_bytes() == ck_path.read_bytes()
        and a.metrics[10:] == tail.metrics
    )

    dt = time.perf_counter() - t0
    ok = schedule_ok and csv_ok and roundtrip_ok and resume_ok and dt < 120.0
    report(9, ok, f"schedule={schedule_ok}, csv_bytes={csv_ok}, "
                  f"roundtrip={roundtrip_ok}, resume={resume_ok}, {dt:.1f}s")


def test_criterion_10_composite_loss_identities():
    t0 = time.perf_counter()
    model = dense_mlp([3, 8, 2], seed=50)
    ds = toy_dataset(16, 3, 2, seed=51)
    from swast.coreset import CoresetState

    coreset = CoresetState(np.arange(16, dtype=np.int64), np.ones(16), 1.0)
    preserved = record_state(model, coreset, ds)
    batch = Batch(ds.features, ds.labels, np.arange(16))

    _, _, sp_same = composite_loss(model, batch, preserved, sp_weight=0.5)
    replay_ok = sp_same == 0.0

    for layer in model.layers:
        layer.W += 0.05
    total, ce, sp_moved = composite_loss(model, batch, preserved, sp_weight=0.0)
    zero_weight_ok = abs(total - ce) <= 1e-12 and sp_moved > 0.0

    warmup_ok = default_warmup(300, 0.1) == 15

    dt = time.perf_counter() - t0
    ok = replay_ok and zero_weight_ok and warmup_ok and dt < 5.0
    report(10, ok, f"replay_sp_zero={replay_ok}, lambda0_identity={zero_weight_ok}, "
                   f"warmup15={warmup_ok}, {dt:.1f}s")

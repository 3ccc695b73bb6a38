"""Selector oracles: exact score values, hand cases, and per-step OMP scans."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swast.coreset import (
    CoresetState,
    ScoreTable,
    _class_budgets,
    el2n_score,
    el2n_select,
    moderate_select,
    noise_fraction,
    omp_gradmatch,
    per_sample_grads,
)
from swast.data import Dataset
from swast.errors import InvalidInputError
from swast.model import PruneScope, SparseLayer, SparseModel
from swast.nn import Batch, backward, forward, softmax

from conftest import dense_mlp, toy_dataset


def bias_model(n_in, biases):
    """Single linear layer with all weights masked: output = bias regardless of x."""
    biases = np.asarray(biases, dtype=np.float64)
    W = np.zeros((biases.size, n_in))
    layer = SparseLayer(W, biases, np.zeros_like(W))
    return SparseModel([layer], PruneScope.FULL_NETWORK)


def dataset_of(features, labels, classes):
    return Dataset(
        np.asarray(features, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        classes,
        "case",
    )


# ---------------------------------------------------------------- budgets

def test_class_budgets_largest_remainder():
    classes = np.array([0, 0, 0, 1, 1, 2])  # quotas for b=4: 2, 4/3, 2/3
    assert _class_budgets(4, classes, 3).tolist() == [2, 1, 1]


def test_class_budgets_exact_split():
    classes = np.array([0, 0, 1, 1])
    assert _class_budgets(2, classes, 2).tolist() == [1, 1]


def test_class_budgets_tie_goes_to_lower_class():
    classes = np.array([0, 1])  # equal fractions, one slot
    assert _class_budgets(1, classes, 2).tolist() == [1, 0]


# ---------------------------------------------------------------- EL2N

def test_el2n_exact_analytic_values():
    # saturated logits make softmax outputs exactly one-hot
    data = dataset_of([[0.0], [0.0]], [0, 1], 2)
    perfect = bias_model(1, [1000.0, 0.0])  # predicts class 0 with p=(1,0)
    s = el2n_score(perfect, data).scores
    assert abs(s[0] - 0.0) <= 1e-12   # right one-hot
    assert abs(s[1] - 2.0) <= 1e-12   # confidently wrong

    uniform = bias_model(1, [0.0] * 10)
    data10 = dataset_of([[0.0]], [3], 10)
    s = el2n_score(uniform, data10).scores
    assert abs(s[0] - 0.9) <= 1e-12   # (C-1)/C at C=10


def test_el2n_select_early_takes_highest():
    table = ScoreTable(np.array([0.1, 0.9, 0.5, 0.7]), np.zeros(4, dtype=np.int64))
    cs = el2n_select(table, alpha=0.5, epoch=1, total_epochs=10)
    assert cs.indices.tolist() == [1, 3]
    assert cs.weights.tolist() == [1.0, 1.0]


def test_el2n_select_late_takes_lowest():
    table = ScoreTable(np.array([0.1, 0.9, 0.5, 0.7]), np.zeros(4, dtype=np.int64))
    cs = el2n_select(table, alpha=0.5, epoch=5, total_epochs=10)
    assert cs.indices.tolist() == [0, 2]


def test_el2n_select_flip_is_at_half():
    table = ScoreTable(np.array([0.1, 0.9]), np.zeros(2, dtype=np.int64))
    early = el2n_select(table, 0.5, epoch=4, total_epochs=9)   # 4 < 4.5
    late = el2n_select(table, 0.5, epoch=5, total_epochs=9)
    assert early.indices.tolist() == [1]
    assert late.indices.tolist() == [0]


def test_el2n_alpha_one_returns_everything():
    table = ScoreTable(np.array([0.3, 0.2, 0.1]), np.zeros(3, dtype=np.int64))
    cs = el2n_select(table, 1.0, epoch=0, total_epochs=2)
    assert cs.indices.tolist() == [0, 1, 2]


def test_el2n_respects_class_budgets():
    scores = np.array([0.9, 0.8, 0.7, 0.1, 0.2])
    classes = np.array([0, 0, 0, 1, 1])
    cs = el2n_select(ScoreTable(scores, classes), 0.6, epoch=0, total_epochs=10)
    # budget ceil(3) -> class 0 gets 2, class 1 gets 1 (largest remainder)
    assert cs.indices.tolist() == [0, 1, 4]


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.5))
def test_el2n_extremes_partition(seed, alpha):
    r = np.random.default_rng(seed)
    n = int(r.integers(4, 30))
    table = ScoreTable(r.random(n), np.zeros(n, dtype=np.int64))
    early = el2n_select(table, alpha, epoch=0, total_epochs=10)
    late = el2n_select(table, alpha, epoch=9, total_epochs=10)
    if 2 * early.size <= n:  # disjoint extremes; overlapping budgets force ties
        assert table.scores[early.indices].min() >= table.scores[late.indices].max()


# ---------------------------------------------------------------- Moderate

def identity_embed_model(out_classes=2):
    # 1-1-C net: hidden activation equals the (non-negative) scalar input
    l1 = SparseLayer(np.array([[1.0]]), np.zeros(1), np.ones((1, 1)))
    W2 = np.ones((out_classes, 1))
    l2 = SparseLayer(W2, np.zeros(out_classes), np.ones_like(W2))
    return SparseModel([l1, l2], PruneScope.FULL_NETWORK)


def test_moderate_hand_case_median_distance():
    # one class at positions 0,1,2 -> center 1, distances (1,0,1), median 1
    data = dataset_of([[0.0], [1.0], [2.0]], [0, 0, 0], 2)
    cs = moderate_select(identity_embed_model(), data, alpha=1.0 / 3.0)
    assert cs.indices.tolist() == [0]  # tie with index 2 breaks low


def test_moderate_all_identical_returns_lowest_indices():
    data = dataset_of([[1.0]] * 5, [0] * 5, 1)
    cs = moderate_select(identity_embed_model(1), data, alpha=0.4)
    assert cs.indices.tolist() == [0, 1]


def test_moderate_alpha_one_returns_everything():
    data = dataset_of([[0.0], [1.0], [2.0]], [0, 0, 0], 1)
    cs = moderate_select(identity_embed_model(1), data, alpha=1.0)
    assert cs.indices.tolist() == [0, 1, 2]


def test_moderate_needs_hidden_layer():
    flat = bias_model(2, [0.0, 0.0])
    data = dataset_of([[0.0, 0.0]], [0], 2)
    with pytest.raises(InvalidInputError):
        moderate_select(flat, data, 1.0)


def test_moderate_deterministic():
    model = dense_mlp([3, 8, 3], seed=2)
    data = toy_dataset(40, 3, 3, seed=5)
    a = moderate_select(model, data, 0.3)
    b = moderate_select(model, data, 0.3)
    assert np.array_equal(a.indices, b.indices)
    assert np.array_equal(a.weights, b.weights)


# ---------------------------------------------------------------- grads

def test_per_sample_grads_single_layer_analytic():
    # one linear softmax layer: row = (p - y) outer [x; 1], flattened
    W = np.array([[0.2, -0.1], [0.4, 0.3]])
    layer = SparseLayer(W, np.array([0.05, -0.2]), np.ones_like(W))
    model = SparseModel([layer], PruneScope.FULL_NETWORK)
    x = np.array([[1.5, -2.0]])
    data = dataset_of(x, [1], 2)
    logits, _ = forward(model, Batch(x, np.array([1]), np.array([0])))
    delta = softmax(logits)[0]
    delta[1] -= 1.0
    expect = np.outer(delta, np.array([1.5, -2.0, 1.0])).reshape(-1)
    got = per_sample_grads(model, data)
    assert got.shape == (1, 6)
    assert np.max(np.abs(got[0] - expect)) < 1e-12


def test_per_sample_grads_zero_loss_row_is_tiny():
    model = bias_model(1, [1000.0, 0.0])
    model.layers[0].M[:] = 1.0  # dense but zero weights; bias dominates
    data = dataset_of([[0.0]], [0], 2)
    row = per_sample_grads(model, data)
    assert np.max(np.abs(row)) == 0.0  # p is exactly one-hot at this saturation


def test_per_sample_grads_mean_matches_batch_gradient():
    model = dense_mlp([4, 8, 3], seed=6)
    data = toy_dataset(17, 4, 3, seed=7)
    G = per_sample_grads(model, data)
    batch = Batch(data.features, data.labels, np.arange(data.n))
    logits, cache = forward(model, batch)
    probs = softmax(logits)
    probs[np.arange(data.n), data.labels] -= 1.0
    g = backward(model, cache, probs / data.n)
    # rows interleave each class's bias entry after its weight block
    full = np.hstack([g.dW[-1], g.db[-1][:, None]]).reshape(-1)
    assert np.max(np.abs(G.mean(axis=0) - full)) < 1e-10


# ---------------------------------------------------------------- OMP

def test_omp_one_atom_exact_match():
    G = np.array([[2.0, 0.0], [0.0, 0.0]])  # target = mean = (1, 0)
    cs = omp_gradmatch(G, alpha=0.5, l2_reg=0.0, tol=0.0)
    assert cs.indices.tolist() == [0]
    assert abs(cs.weights[0] - 0.5) < 1e-12  # ||target|| / ||row||
    resid = np.array([1.0, 0.0]) - cs.weights[0] * G[0]
    assert np.linalg.norm(resid) < 1e-12


def test_omp_identical_rows_equal_split():
    g = np.array([1.0, 2.0, -1.0])
    G = np.tile(g, (4, 1))
    cs = omp_gradmatch(G, alpha=1.0, l2_reg=1e-8, tol=0.0)
    assert cs.indices.tolist() == [0, 1, 2, 3]
    assert np.max(np.abs(cs.weights - 0.25)) < 1e-6
    assert abs(cs.weights.sum() - 1.0) < 1e-6


def test_omp_matches_per_step_argmax_scan():
    # every traced pick must equal a brute scan over unselected rows
    r = np.random.default_rng(12)
    for _ in range(10):
        n, p = int(r.integers(4, 9)), int(r.integers(2, 4))
        G = r.normal(size=(n, p))
        trace = []
        omp_gradmatch(G, alpha=0.5, l2_reg=1e-6, tol=0.0, trace=trace)
        assert trace
        assert np.array_equal(trace[0][0], G.mean(axis=0))
        picked = []
        for resid_before, pick in trace:
            scores = np.abs(G @ resid_before)
            scores[picked] = -np.inf
            assert pick == int(np.argmax(scores))
            picked.append(pick)


def test_omp_residual_orthogonal_after_refit():
    r = np.random.default_rng(3)
    G = r.normal(size=(6, 4))
    trace = []
    cs = omp_gradmatch(G, alpha=0.5, l2_reg=0.0, tol=0.0, trace=trace)
    target = G.mean(axis=0)
    resid = target - cs.weights @ G[cs.indices]
    support = cs.weights > 0
    if support.any():
        inner = G[cs.indices][support] @ resid
        assert np.max(np.abs(inner)) < 1e-8


def test_omp_residual_norm_monotone():
    r = np.random.default_rng(9)
    G = r.normal(size=(10, 4))
    trace = []
    omp_gradmatch(G, alpha=0.5, l2_reg=1e-6, tol=0.0, trace=trace)
    norms = [np.linalg.norm(rb) for rb, _ in trace]
    target_norm = np.linalg.norm(G.mean(axis=0))
    assert norms[0] == pytest.approx(target_norm)
    assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))


def test_omp_all_zero_matrix_degenerate():
    events = []
    cs = omp_gradmatch(np.zeros((5, 3)), alpha=0.4, events=events)
    assert cs.indices.tolist() == [0, 1]
    assert not cs.weights.any()
    assert any(e["kind"] == "degenerate_selection" for e in events)


def test_omp_stops_at_tol():
    # rows 0 and 1 rebuild the mean (1,1) exactly; the third slot is never used
    G = np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    cs = omp_gradmatch(G, alpha=1.0, l2_reg=0.0, tol=1e-9)
    assert cs.indices.tolist() == [0, 1]
    assert np.max(np.abs(cs.weights - 0.5)) < 1e-9


def test_omp_per_class_runs_one_instance_per_class():
    r = np.random.default_rng(4)
    G = r.normal(size=(8, 3))
    labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    cs = omp_gradmatch(G, alpha=0.5, per_class=True, labels=labels)
    picked_classes = labels[cs.indices]
    assert (picked_classes == 0).sum() == 2
    assert (picked_classes == 1).sum() == 2


# ---------------------------------------------------------------- misc

def test_noise_fraction_examples():
    flags = np.array([True, False, False, False])
    full = CoresetState(np.arange(4), np.ones(4), 1.0)
    assert noise_fraction(full, flags) == 0.25
    clean = CoresetState(np.array([1, 2]), np.ones(2), 0.5)
    assert noise_fraction(clean, flags) == 0.0
    noisy = CoresetState(np.array([0]), np.ones(1), 0.25)
    assert noise_fraction(noisy, flags) == 1.0


def test_noise_fraction_empty_coreset_zero():
    empty = CoresetState(np.empty(0, dtype=np.int64), np.empty(0), 1.0)
    assert noise_fraction(empty, np.array([True, False])) == 0.0


def test_coreset_state_validation():
    with pytest.raises(InvalidInputError):
        CoresetState(np.array([2, 1]), np.ones(2), 0.5)  # unsorted
    with pytest.raises(InvalidInputError):
        CoresetState(np.array([1, 1]), np.ones(2), 0.5)  # duplicate
    with pytest.raises(InvalidInputError):
        CoresetState(np.array([0]), np.array([-0.5]), 0.5)  # negative weight
    with pytest.raises(InvalidInputError):
        CoresetState(np.array([0]), np.ones(1), 1.5)  # alpha out of range


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_selectors_obey_budget_and_ordering(seed, alpha):
    r = np.random.default_rng(seed)
    n = int(r.integers(3, 25))
    classes = r.integers(0, 3, size=n).astype(np.int64)
    table = ScoreTable(r.random(n), classes)
    cs = el2n_select(table, alpha, epoch=0, total_epochs=4)
    assert cs.size <= int(np.ceil(alpha * n))
    assert np.all(np.diff(cs.indices) > 0)
    assert cs.indices.min() >= 0 and cs.indices.max() < n

"""Coreset selectors: EL2N with midpoint flip, Moderate, OMP gradient matching.

Every selector is deterministic given (model, dataset, config) and returns a
CoresetState with sorted unique indices; index ties always break toward the
lowest index in the dataset's canonical ordering.
"""

from dataclasses import dataclass
import math

import numpy as np

from .data import Dataset
from .errors import InvalidInputError
from .model import SparseModel
from .nn import Batch, forward, softmax


@dataclass
class CoresetState:
    """Selected sample ids, per-sample weights (1.0 when unweighted), target fraction."""

    indices: np.ndarray
    weights: np.ndarray
    alpha: float

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.indices.ndim != 1 or self.weights.shape != self.indices.shape:
            raise InvalidInputError("indices and weights must be aligned vectors")
        if self.indices.size:
            if np.any(np.diff(self.indices) <= 0):
                raise InvalidInputError("indices must be sorted and unique")
            if self.weights.min() < 0.0:
                raise InvalidInputError("weights must be non-negative")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidInputError("alpha must be in (0,1]")

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass
class ScoreTable:
    """Per-sample selection scores and class labels."""

    scores: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.classes = np.asarray(self.classes, dtype=np.int64)
        if self.scores.shape != self.classes.shape or self.scores.ndim != 1:
            raise InvalidInputError("scores and classes must be aligned vectors")
        if self.scores.size and not np.all(np.isfinite(self.scores)):
            raise InvalidInputError("scores must be finite")


def _full_batch(dataset: Dataset) -> Batch:
    return Batch(dataset.features, dataset.labels, np.arange(dataset.n))


def _class_budgets(budget: int, classes: np.ndarray, class_count: int) -> np.ndarray:
    """Split a budget across classes proportionally to class frequency.

    Largest-remainder rounding: floor the quotas, then hand the leftover to
    the classes with the largest fractional parts (ties to the lower class).
    """
    n = classes.size
    counts = np.bincount(classes, minlength=class_count)
    quotas = budget * counts / n
    base = np.floor(quotas).astype(np.int64)
    leftover = budget - int(base.sum())
    if leftover > 0:
        frac = quotas - base
        order = np.argsort(-frac, kind="stable")
        base[order[:leftover]] += 1
    return base


def el2n_score(model: SparseModel, dataset: Dataset) -> ScoreTable:
    """Squared error between softmax prediction and one-hot label, in [0, 2]."""
    if model.n_classes < dataset.class_count:
        raise InvalidInputError("model output width is smaller than the class count")
    logits, _ = forward(model, _full_batch(dataset))
    probs = softmax(logits)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(dataset.n), dataset.labels] = 1.0
    scores = ((probs - one_hot) ** 2).sum(axis=1)
    return ScoreTable(scores, dataset.labels.copy())


def el2n_select(
    scores: ScoreTable, alpha: float, epoch: int, total_epochs: int
) -> CoresetState:
    """Per-class budget selection on EL2N scores with a midpoint flip.

    Before half of total_epochs the highest-scoring samples are kept; from the
    midpoint on, the lowest-scoring ones.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidInputError("alpha must be in (0,1]")
    n = scores.scores.size
    budget = math.ceil(alpha * n)
    late = epoch >= total_epochs / 2.0
    class_count = int(scores.classes.max()) + 1 if n else 1
    budgets = _class_budgets(budget, scores.classes, class_count)
    chosen = []
    for c in range(class_count):
        members = np.flatnonzero(scores.classes == c)
        take = min(int(budgets[c]), members.size)
        if take == 0:
            continue
        key = scores.scores[members] if late else -scores.scores[members]
        order = np.argsort(key, kind="stable")
        chosen.append(members[order[:take]])
    indices = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)
    return CoresetState(indices, np.ones(indices.size), alpha)


def moderate_select(model: SparseModel, dataset: Dataset, alpha: float) -> CoresetState:
    """Keep samples whose distance to their class center is nearest the class median.

    The embedding is the input to the final layer (the last hidden activation),
    so the model needs at least one hidden layer. Empty classes are skipped.
    """
    if model.n_layers < 2:
        raise InvalidInputError("moderate selection needs at least one hidden layer")
    if not 0.0 < alpha <= 1.0:
        raise InvalidInputError("alpha must be in (0,1]")
    _, cache = forward(model, _full_batch(dataset))
    emb = cache.layer_inputs[-1]
    budget = math.ceil(alpha * dataset.n)
    budgets = _class_budgets(budget, dataset.labels, dataset.class_count)
    chosen = []
    for c in range(dataset.class_count):
        members = np.flatnonzero(dataset.labels == c)
        take = min(int(budgets[c]), members.size)
        if members.size == 0 or take == 0:
            continue
        center = emb[members].mean(axis=0)
        dist = np.sqrt(((emb[members] - center) ** 2).sum(axis=1))
        key = np.abs(dist - np.median(dist))
        order = np.argsort(key, kind="stable")
        chosen.append(members[order[:take]])
    indices = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)
    return CoresetState(indices, np.ones(indices.size), alpha)


def per_sample_grads(model: SparseModel, dataset: Dataset) -> np.ndarray:
    """Per-sample cross-entropy gradients w.r.t. the final layer, one flat row each.

    Row i is outer(softmax(z_i) - onehot(y_i), [a_i; 1]) flattened, i.e. the
    final-layer weight gradient with the bias gradient interleaved column-last.
    """
    logits, cache = forward(model, _full_batch(dataset))
    probs = softmax(logits)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(dataset.n), dataset.labels] = 1.0
    delta = probs - one_hot
    last_in = cache.layer_inputs[-1]
    augmented = np.hstack([last_in, np.ones((dataset.n, 1))])
    return np.einsum("nc,nh->nch", delta, augmented, optimize=False).reshape(
        dataset.n, -1
    )


def _ridge_refit(A: np.ndarray, target: np.ndarray, l2_reg: float) -> np.ndarray:
    """min_w ||A^T w - target||^2 + l2 ||w||^2 over the selected rows A (k x p)."""
    k = A.shape[0]
    gram = A @ A.T + l2_reg * np.eye(k)
    rhs = A @ target
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(gram, rhs, rcond=None)[0]


def _nonneg_weights(A: np.ndarray, target: np.ndarray, l2_reg: float) -> np.ndarray:
    """Ridge fit, clip negatives, one refit on the surviving support, clip again."""
    w = _ridge_refit(A, target, l2_reg)
    neg = w < 0.0
    if np.any(neg):
        w = np.zeros_like(w)
        support = np.flatnonzero(~neg)
        if support.size:
            w[support] = np.maximum(
                _ridge_refit(A[support], target, l2_reg), 0.0
            )
    return w


def _omp_greedy(
    G: np.ndarray,
    target: np.ndarray,
    budget: int,
    l2_reg: float,
    tol: float,
    trace: list | None = None,
) -> tuple[list, np.ndarray]:
    """Greedy OMP toward target; returns (picked row ids, weights in pick order).

    When trace is given, (residual_before, picked_index) pairs are appended so
    tests can replay each argmax decision.
    """
    n = G.shape[0]
    residual = target.astype(np.float64).copy()
    picked: list[int] = []
    weights = np.zeros(0)
    available = np.ones(n, dtype=bool)
    while len(picked) < budget and float(np.linalg.norm(residual)) > tol:
        scores = np.abs(G @ residual)
        scores[~available] = -np.inf
        pick = int(np.argmax(scores))  # argmax takes the lowest index on ties
        if trace is not None:
            trace.append((residual.copy(), pick))
        picked.append(pick)
        available[pick] = False
        A = G[picked]
        weights = _nonneg_weights(A, target, l2_reg)
        residual = target - A.T @ weights
    return picked, weights


def omp_gradmatch(
    G: np.ndarray,
    alpha: float,
    l2_reg: float = 1e-4,
    tol: float = 1e-8,
    per_class: bool = False,
    labels: np.ndarray | None = None,
    events: list | None = None,
    trace: list | None = None,
) -> CoresetState:
    """OMP selection of rows of G whose weighted sum matches the mean gradient.

    Global by default; per_class=True runs one OMP per class toward the class
    mean gradient with proportional budgets (labels required). Stops early when
    the residual norm reaches tol. An all-zero G degenerates to the lowest-index
    rows with zero weights and records an event.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] == 0:
        raise InvalidInputError("G must be a non-empty 2-D matrix")
    if not 0.0 < alpha <= 1.0:
        raise InvalidInputError("alpha must be in (0,1]")
    n = G.shape[0]
    budget = math.ceil(alpha * n)
    if not np.any(G):
        if events is not None:
            events.append({"kind": "degenerate_selection", "reason": "all-zero gradients"})
        idx = np.arange(min(budget, n), dtype=np.int64)
        return CoresetState(idx, np.zeros(idx.size), alpha)

    if per_class:
        if labels is None:
            raise InvalidInputError("per_class OMP needs labels")
        labels = np.asarray(labels, dtype=np.int64)
        class_count = int(labels.max()) + 1
        budgets = _class_budgets(budget, labels, class_count)
        picked_all, weights_all = [], []
        for c in range(class_count):
            members = np.flatnonzero(labels == c)
            take = min(int(budgets[c]), members.size)
            if take == 0:
                continue
            sub = G[members]
            picked, w = _omp_greedy(sub, sub.mean(axis=0), take, l2_reg, tol, trace)
            picked_all.extend(members[p] for p in picked)
            weights_all.extend(w)
        picked_arr = np.asarray(picked_all, dtype=np.int64)
        weights_arr = np.asarray(weights_all, dtype=np.float64)
    else:
        picked, w = _omp_greedy(G, G.mean(axis=0), budget, l2_reg, tol, trace)
        picked_arr = np.asarray(picked, dtype=np.int64)
        weights_arr = np.asarray(w, dtype=np.float64)

    order = np.argsort(picked_arr, kind="stable")
    return CoresetState(picked_arr[order], weights_arr[order], alpha)


def noise_fraction(coreset: CoresetState, noise_flags: np.ndarray) -> float:
    """Fraction of selected samples whose noise flag is set; 0.0 when empty."""
    if coreset.size == 0:
        return 0.0
    flags = np.asarray(noise_flags, dtype=bool)
    if coreset.indices.max() >= flags.size:
        raise InvalidInputError("noise flags do not cover the coreset indices")
    return float(flags[coreset.indices].mean())

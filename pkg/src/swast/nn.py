"""Deterministic forward/backward passes and softmax/CE/KL primitives.

All math runs in float64. Linear layers are computed with np.einsum and
optimize=False so each output row is reduced in a fixed order independent of
batch composition: the logits for a sample are bit-identical whether it is
evaluated alone or inside any larger batch. BLAS matmul does not guarantee
that, and several engine invariants depend on exact replay.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidStateError
from .model import SparseModel

PROB_FLOOR = 1e-12


@dataclass
class Batch:
    """Mini-batch: inputs (n x d), integer labels, global sample ids."""

    inputs: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise InvalidInputError("batch inputs must be 2-D")
        n = self.inputs.shape[0]
        if self.labels.shape != (n,) or self.sample_ids.shape != (n,):
            raise InvalidInputError("labels and sample_ids must have one entry per row")
        if n and self.labels.min() < 0:
            raise InvalidInputError("labels must be non-negative")
        if len(np.unique(self.sample_ids)) != n:
            raise InvalidInputError("sample_ids must be unique within a batch")
        if n and not np.all(np.isfinite(self.inputs)):
            raise InvalidInputError("batch inputs must be finite")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations retained for backward."""

    layer_inputs: list  # layer_inputs[l] is the input to layer l
    pre_acts: list      # pre_acts[l] is the pre-activation output of layer l
    signature: tuple    # ((out, in) per layer, batch rows)


@dataclass
class Gradients:
    """Dense gradients, same shapes as the model's weights and biases."""

    dW: list
    db: list

    def masked(self, model: SparseModel) -> "Gradients":
        """Gradient with masked-off positions zeroed."""
        return Gradients(
            [g * layer.M for g, layer in zip(self.dW, model.layers)],
            [g.copy() for g in self.db],
        )


def _model_signature(model: SparseModel, n_rows: int) -> tuple:
    return (tuple(layer.W.shape for layer in model.layers), n_rows)


def _masked_weights(layer) -> np.ndarray:
    # np.where keeps masked contributions at +0.0 regardless of the stored
    # weight's sign, so stale values behind a mask can never perturb a sum.
    return np.where(layer.M != 0.0, layer.W, 0.0)


def _linear(inputs: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return np.einsum("ni,oi->no", inputs, weights, optimize=False) + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; accepts a vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax requires finite, non-empty logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-log p[label] with the probability clamped below at PROB_FLOOR."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidInputError("cross_entropy expects a probability vector")
    if not 0 <= label < p.shape[0]:
        raise InvalidInputError(f"label {label} out of range for {p.shape[0]} classes")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q), q clamped at PROB_FLOOR, 0 * log 0 := 0.

    Terms cancel exactly before summation when p == q bitwise, so the
    divergence of a distribution against itself is exactly 0.0.
    """
    q_safe = np.maximum(q, PROB_FLOOR)
    ratio = np.where(p > 0.0, p, 1.0) / q_safe
    terms = np.where(p > 0.0, p * np.log(ratio), 0.0)
    return terms.sum(axis=-1)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL divergence between two probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise InvalidInputError("kl_divergence expects two vectors of equal length")
    return float(_kl_rows(p, q))


def forward(model: SparseModel, batch: Batch) -> tuple[np.ndarray, ForwardCache]:
    """Logits and cache for a batch: ReLU hidden layers, linear final layer."""
    if batch.inputs.shape[1] != model.in_dim:
        raise InvalidInputError(
            f"input width {batch.inputs.shape[1]} != model input dim {model.in_dim}"
        )
    acts = batch.inputs
    layer_inputs, pre_acts = [], []
    last = model.n_layers - 1
    for idx, layer in enumerate(model.layers):
        layer_inputs.append(acts)
        z = _linear(acts, _masked_weights(layer), layer.b)
        pre_acts.append(z)
        acts = np.maximum(z, 0.0) if idx < last else z
    cache = ForwardCache(layer_inputs, pre_acts, _model_signature(model, len(batch)))
    return pre_acts[-1], cache


def backward(model: SparseModel, cache: ForwardCache, dlogits: np.ndarray) -> Gradients:
    """Dense gradients for all weights and biases given d(loss)/d(logits).

    Gradients are reported for every position including masked ones (RigL
    growth scores inactive connections); use Gradients.masked for updates.
    """
    if cache.signature != _model_signature(model, dlogits.shape[0]):
        raise InvalidStateError("forward cache does not match this model and batch")
    dW = [None] * model.n_layers
    db = [None] * model.n_layers
    dz = np.asarray(dlogits, dtype=np.float64)
    for idx in range(model.n_layers - 1, -1, -1):
        layer = model.layers[idx]
        a = cache.layer_inputs[idx]
        dW[idx] = np.einsum("no,ni->oi", dz, a, optimize=False)
        db[idx] = dz.sum(axis=0)
        if idx > 0:
            da = np.einsum("no,oi->ni", dz, _masked_weights(layer), optimize=False)
            dz = da * (cache.pre_acts[idx - 1] > 0.0)  # ReLU subgradient at 0 is 0
    return Gradients(dW, db)


def mean_ce_loss(model: SparseModel, batch: Batch) -> float:
    """Mean cross-entropy of softmax(logits) over a batch; 0.0 when empty."""
    if len(batch) == 0:
        return 0.0
    logits, _ = forward(model, batch)
    probs = softmax(logits)
    picked = probs[np.arange(len(batch)), batch.labels]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def grad_check(model: SparseModel, batch: Batch, h: float = 1e-5) -> float:
    """Max relative error between backward and central finite differences.

    The finite-difference loss is the mean cross-entropy; analytic gradients
    are compared through the masked view because perturbing a masked weight
    cannot change the loss. Relative error uses max(1, |g_fd|) as denominator.
    """
    if len(batch) == 0:
        return 0.0
    n = len(batch)
    logits, cache = forward(model, batch)
    probs = softmax(logits)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(n), batch.labels] = 1.0
    grads = backward(model, cache, (probs - one_hot) / n).masked(model)

    worst = 0.0
    for layer, gW, gb in zip(model.layers, grads.dW, grads.db):
        for arr, g in ((layer.W, gW), (layer.b, gb)):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = mean_ce_loss(model, batch)
                flat[i] = orig - h
                down = mean_ce_loss(model, batch)
                flat[i] = orig
                fd = (up - down) / (2.0 * h)
                err = abs(fd - gflat[i]) / max(1.0, abs(fd))
                if err > worst:
                    worst = err
    return worst

"""Shared builders for the test suite."""

import numpy as np
import pytest

from swast.model import SparsityPlan, build_mlp
from swast.nn import Batch
from swast.data import Dataset


def dense_mlp(widths, seed=0):
    """Fully dense MLP; biases randomized so no ReLU unit sits exactly at zero."""
    rng = np.random.default_rng(seed)
    model = build_mlp(list(widths), SparsityPlan(target_rate=0.0), rng)
    for layer in model.layers:
        layer.b[:] = rng.uniform(-0.5, 0.5, size=layer.b.shape)
    return model


def sparse_mlp(widths, target, seed=0):
    rng = np.random.default_rng(seed)
    return build_mlp(list(widths), SparsityPlan(target_rate=target), rng)


def random_batch(n, dim, classes, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(
        rng.normal(size=(n, dim)),
        rng.integers(0, classes, size=n),
        np.arange(n),
    )


def toy_dataset(n, dim, classes, seed=0, name="toy"):
    rng = np.random.default_rng(seed)
    return Dataset(
        rng.normal(size=(n, dim)),
        rng.integers(0, classes, size=n).astype(np.int64),
        classes,
        name,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)

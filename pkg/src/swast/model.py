"""Masked MLP: dense parameters plus binary masks, sparsity plans and accounting.

The final layer of a model is treated as the classifier ("FC") layer; all
earlier layers are the backbone. Masks are stored as float 0/1 arrays so they
can multiply weights directly; masked weights are kept at exactly 0.
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np

from .errors import ConfigError, InvalidInputError


class PruneScope(Enum):
    FC_ONLY = "fc_only"
    FULL_NETWORK = "full_network"


class Distribution(Enum):
    UNIFORM = "uniform"
    ERK = "erk"


@dataclass
class SparsityPlan:
    """Where and how much to prune.

    target_rate is the sparsity (fraction of weights removed), not density.
    fc_fixed_rate pins the final layer's sparsity under FULL_NETWORK scope;
    None means "same as target_rate".
    """

    target_rate: float = 0.0
    distribution: Distribution = Distribution.ERK
    scope: PruneScope = PruneScope.FULL_NETWORK
    fc_fixed_rate: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.target_rate < 1.0:
            raise ConfigError(f"target_rate must be in [0,1), got {self.target_rate}")
        if self.fc_fixed_rate is not None and not 0.0 <= self.fc_fixed_rate < 1.0:
            raise ConfigError(f"fc_fixed_rate must be in [0,1), got {self.fc_fixed_rate}")


@dataclass
class SparseLayer:
    """One linear layer: W (out x in), bias b (out), mask M (out x in)."""

    W: np.ndarray
    b: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.M = np.asarray(self.M, dtype=np.float64)
        if self.W.ndim != 2 or self.M.shape != self.W.shape:
            raise InvalidInputError("W and M must be 2-D with identical shapes")
        if self.b.shape != (self.W.shape[0],):
            raise InvalidInputError("bias length must equal the output width")

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    def enforce_mask(self):
        """Zero every weight whose mask entry is 0."""
        self.W[self.M == 0.0] = 0.0

    def active_count(self) -> int:
        return int(np.count_nonzero(self.M))


@dataclass
class SparseModel:
    layers: list[SparseLayer]
    prune_scope: PruneScope = PruneScope.FULL_NETWORK

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise InvalidInputError("consecutive layer widths must chain")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    def enforce_masks(self):
        for layer in self.layers:
            layer.enforce_mask()

    def copy(self) -> "SparseModel":
        return SparseModel(
            [SparseLayer(l.W.copy(), l.b.copy(), l.M.copy()) for l in self.layers],
            self.prune_scope,
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def erk_raw_scores(layer_dims: list[tuple]) -> list[float]:
    """Raw ERK density scores (n_in + n_out + w + h) / (n_in * n_out * w * h)."""
    scores = []
    for n_in, n_out, kw, kh in layer_dims:
        if min(n_in, n_out, kw, kh) <= 0:
            raise InvalidInputError("layer dims must be positive")
        scores.append((n_in + n_out + kw + kh) / (n_in * n_out * kw * kh))
    return scores


def layer_densities(plan: SparsityPlan, layer_dims: list[tuple]) -> list[float]:
    """Per-layer density fractions for a plan over MLP layer dims (in, out, kw, kh).

    FC_ONLY keeps the backbone dense and prunes the final layer at target_rate.
    FULL_NETWORK pins the final layer at fc_fixed_rate (target_rate when unset)
    and spreads the remaining budget over the backbone: Uniform keeps the first
    layer dense and the rest at 1 - target_rate; ERK allocates proportionally
    to raw scores, rescaled so the global parameter-weighted sparsity equals
    target_rate, with densities capped at 1.
    """
    n_layers = len(layer_dims)
    if n_layers == 0:
        raise InvalidInputError("need at least one layer")
    if plan.target_rate == 0.0:
        return [1.0] * n_layers

    if plan.scope is PruneScope.FC_ONLY:
        return [1.0] * (n_layers - 1) + [1.0 - plan.target_rate]

    fc_rate = plan.fc_fixed_rate if plan.fc_fixed_rate is not None else plan.target_rate
    fc_density = 1.0 - fc_rate
    if n_layers == 1:
        return [fc_density]

    if plan.distribution is Distribution.UNIFORM:
        middle = [1.0 - plan.target_rate] * (n_layers - 2)
        return [1.0] + middle + [fc_density]

    # ERK over the backbone with the final layer pinned.
    params = [n_in * n_out * kw * kh for n_in, n_out, kw, kh in layer_dims]
    total = sum(params)
    fc_params = params[-1]
    target_active = (1.0 - plan.target_rate) * total
    backbone_active = target_active - fc_density * fc_params
    backbone_params = params[:-1]
    if backbone_active <= 0.0:
        raise ConfigError("sparsity plan infeasible: final layer alone exceeds the budget")
    if backbone_active > sum(backbone_params):
        raise ConfigError("sparsity plan infeasible: backbone cannot absorb the budget")

    scores = erk_raw_scores(layer_dims[:-1])
    densities = [0.0] * (n_layers - 1)
    capped = [False] * (n_layers - 1)
    remaining = backbone_active
    while True:
        denom = sum(p * s for p, s, c in zip(backbone_params, scores, capped) if not c)
        if denom <= 0.0:
            raise ConfigError("sparsity plan infeasible: every backbone layer capped")
        eps = remaining / denom
        overflow = [
            i for i in range(n_layers - 1) if not capped[i] and eps * scores[i] > 1.0
        ]
        if not overflow:
            for i in range(n_layers - 1):
                if not capped[i]:
                    densities[i] = eps * scores[i]
            break
        for i in overflow:
            capped[i] = True
            densities[i] = 1.0
            remaining -= backbone_params[i]
        if remaining < 0.0:
            raise ConfigError("sparsity plan infeasible after capping dense layers")
    for d in densities:
        if not 0.0 < d <= 1.0:
            raise ConfigError(f"derived backbone density {d} outside (0,1]")
    return densities + [fc_density]


def init_masks(model: SparseModel, densities: list[float], rng: np.random.Generator) -> SparseModel:
    """Install random masks with exactly round(density * size) active entries per layer.

    At least one entry stays active per layer; masked weights are zeroed.
    """
    if len(densities) != model.n_layers:
        raise InvalidInputError("one density per layer required")
    for layer, density in zip(model.layers, densities):
        if not 0.0 < density <= 1.0:
            raise InvalidInputError(f"density {density} outside (0,1]")
        size = layer.W.size
        count = max(1, min(size, _round_half_up(density * size)))
        mask = np.zeros(size, dtype=np.float64)
        active = rng.choice(size, size=count, replace=False)
        mask[active] = 1.0
        layer.M = mask.reshape(layer.W.shape)
        layer.enforce_mask()
    return model


def actual_sparsity(model: SparseModel) -> tuple[float, float]:
    """(scoped, whole-model) sparsity fractions over weight entries.

    Scoped counts only the layers the model's prune scope covers.
    """
    scope_idx = (
        [model.n_layers - 1]
        if model.prune_scope is PruneScope.FC_ONLY
        else list(range(model.n_layers))
    )
    def frac(indices):
        total = sum(model.layers[i].W.size for i in indices)
        active = sum(model.layers[i].active_count() for i in indices)
        return 1.0 - active / total
    return frac(scope_idx), frac(range(model.n_layers))


def apply_scope(model: SparseModel, plan: SparsityPlan) -> list[int]:
    """Indices of the layers the plan allows pruning to touch."""
    if plan.scope is PruneScope.FC_ONLY:
        return [model.n_layers - 1]
    return list(range(model.n_layers))


def build_mlp(widths: list[int], plan: SparsityPlan, rng: np.random.Generator) -> SparseModel:
    """He-uniform initialized MLP with masks drawn at the plan's densities.

    widths = [input_dim, hidden..., n_classes].
    """
    if len(widths) < 2:
        raise InvalidInputError("widths must list input and output dims")
    layers = []
    for fan_in, fan_out in zip(widths, widths[1:]):
        limit = math.sqrt(6.0 / fan_in)
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(SparseLayer(W, np.zeros(fan_out), np.ones((fan_out, fan_in))))
    model = SparseModel(layers, plan.scope)
    dims = [(fan_in, fan_out, 1, 1) for fan_in, fan_out in zip(widths, widths[1:])]
    densities = layer_densities(plan, dims)
    return init_masks(model, densities, rng)

"""RigL-style drop/grow mask updates and one-shot magnitude pruning.

Drop removes the smallest-magnitude active weights; grow activates the
inactive positions with the largest dense-gradient magnitude, initialized to
exactly zero. Positions dropped within the same update are excluded from the
grow candidates. All ties break toward the lowest flat index.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError
from .model import SparseModel, SparsityPlan, apply_scope, _round_half_up
from .nn import Gradients


@dataclass
class RigLConfig:
    """Mask-update schedule: every delta_t steps until t_end.

    t_end=None lets the engine resolve it to 75% of the planned total steps.
    drop_fraction_init is the cosine schedule's amplitude (alpha_drop).
    """

    delta_t: int = 100
    t_end: int | None = None
    drop_fraction_init: float = 0.3
    plan: SparsityPlan = field(default_factory=SparsityPlan)

    def __post_init__(self):
        if self.delta_t < 1:
            raise ConfigError("delta_t must be >= 1")
        if self.t_end is not None and self.t_end < self.delta_t:
            raise ConfigError("t_end must be >= delta_t")
        if not 0.0 <= self.drop_fraction_init < 1.0:
            raise ConfigError("drop_fraction_init must be in [0,1)")


def f_decay(t: int, alpha: float, t_end: int) -> float:
    """Cosine-annealed update fraction (alpha/2)(1 + cos(t*pi/t_end)); 0 past t_end."""
    if t > t_end:
        return 0.0
    if t < 0:
        raise InvalidInputError("step t must be non-negative")
    return (alpha / 2.0) * (1.0 + np.cos(t * np.pi / t_end))


def rigl_update(
    model: SparseModel,
    dense_grads: Gradients,
    t: int,
    cfg: RigLConfig,
    rng: np.random.Generator,
) -> list[dict]:
    """Drop/grow masks in place on every layer the plan's scope covers.

    Per layer, k = round(f_decay(t) * active_count) smallest-|W| active weights
    are deactivated and k inactive positions with the largest |dense gradient|
    are activated at weight exactly 0. Per-layer active counts are conserved;
    if k exceeds the inactive pool it is clamped and a warning event recorded.
    The rng argument is kept for interface stability; the update itself is
    fully deterministic (ties break by lowest flat index).

    Returns a list of per-layer event dicts.
    """
    del rng
    if cfg.t_end is None:
        raise InvalidInputError("t_end must be resolved before rigl_update")
    events = []
    fraction = f_decay(t, cfg.drop_fraction_init, cfg.t_end)
    for layer_idx in apply_scope(model, cfg.plan):
        layer = model.layers[layer_idx]
        w = layer.W.reshape(-1)
        m = layer.M.reshape(-1)
        g = dense_grads.dW[layer_idx].reshape(-1)
        active = np.flatnonzero(m != 0.0)
        inactive = np.flatnonzero(m == 0.0)  # pre-drop: excludes this round's drops
        k = _round_half_up(fraction * active.size)
        k = min(k, active.size)
        if k == 0:
            continue
        if k > inactive.size:
            events.append(
                {
                    "kind": "rigl_clamp",
                    "layer": layer_idx,
                    "step": t,
                    "requested": k,
                    "pool": int(inactive.size),
                }
            )
            k = inactive.size
            if k == 0:
                continue
        drop_order = np.argsort(np.abs(w[active]), kind="stable")
        drop_idx = active[drop_order[:k]]
        grow_order = np.argsort(-np.abs(g[inactive]), kind="stable")
        grow_idx = inactive[grow_order[:k]]
        m[drop_idx] = 0.0
        w[drop_idx] = 0.0
        m[grow_idx] = 1.0
        w[grow_idx] = 0.0
        events.append(
            {
                "kind": "rigl_update",
                "layer": layer_idx,
                "step": t,
                "dropped": int(k),
                "grown": int(k),
            }
        )
    return events


def magnitude_prune(values: np.ndarray, k_zero: int) -> np.ndarray:
    """Copy of values with the k_zero smallest-magnitude entries set to 0.

    Ties break toward the lowest index.
    """
    v = np.asarray(values, dtype=np.float64).copy()
    if v.ndim != 1:
        raise InvalidInputError("magnitude_prune expects a vector")
    if not 0 <= k_zero <= v.size:
        raise InvalidInputError(f"k_zero {k_zero} outside [0, {v.size}]")
    order = np.argsort(np.abs(v), kind="stable")
    v[order[:k_zero]] = 0.0
    return v

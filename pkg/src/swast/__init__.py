"""Simultaneous weight and sample tailoring: alternating sparse training and
coreset selection with state preservation, plus polynomial-interplay studies."""

from .coreset import (
    CoresetState,
    ScoreTable,
    el2n_score,
    el2n_select,
    moderate_select,
    noise_fraction,
    omp_gradmatch,
    per_sample_grads,
)
from .data import Dataset, SyntheticKind, generate_synthetic, inject_label_noise, load_idx_subset
from .engine import (
    EpochMetrics,
    OptimizerConfig,
    PreservedState,
    RunResult,
    SelectorKind,
    TrainConfig,
    Variant,
    ablation_matrix,
    composite_loss,
    default_warmup,
    record_state,
    run_swast,
    train_epoch,
)
from .errors import (
    ConfigError,
    CorruptionError,
    DivergenceError,
    FormatError,
    InvalidInputError,
    InvalidStateError,
    SwastError,
    UnsupportedVersionError,
)
from .interplay import (
    IddConfig,
    InterplaySample,
    PolynomialFit,
    estimate_idd,
    idd_sweep,
    poly_mse,
    polyfit_ls,
    prune_experiment,
    runge,
    sample_interplay,
)
from .model import (
    Distribution,
    PruneScope,
    SparseLayer,
    SparseModel,
    SparsityPlan,
    actual_sparsity,
    apply_scope,
    build_mlp,
    init_masks,
    layer_densities,
)
from .nn import (
    Batch,
    ForwardCache,
    Gradients,
    backward,
    cross_entropy,
    forward,
    grad_check,
    kl_divergence,
    softmax,
)
from .persist import Checkpoint, emit_metrics, load_checkpoint, save_checkpoint
from .pruning import RigLConfig, f_decay, magnitude_prune, rigl_update

__version__ = "0.1.0"

"""INI-style config files mapping 1:1 onto TrainConfig plus a data section.

Unknown sections or keys are hard errors: a silently ignored typo in a
schedule scalar would invalidate an experiment. Values accepting "auto" are
resolved by the engine (warmup_epochs, t_end, fc_fixed_rate).
"""

import configparser
from dataclasses import dataclass
import os

from .engine import OptimizerConfig, SelectorKind, TrainConfig, Variant
from .errors import ConfigError
from .model import Distribution, SparsityPlan
from .pruning import RigLConfig

_SCHEMA = {
    "train": {
        "total_epochs",
        "warmup_epochs",
        "selection_interval",
        "coreset_ratio",
        "sp_weight",
        "use_sp",
        "variant",
        "selector",
        "batch_size",
        "seed",
        "omp_per_class",
    },
    "optimizer": {"lr", "momentum", "weight_decay", "nesterov", "cosine_anneal"},
    "rigl": {"delta_t", "t_end", "drop_fraction_init"},
    "sparsity": {"target_rate", "distribution", "fc_fixed_rate"},
    "model": {"hidden"},
    "data": {
        "kind",
        "n",
        "d",
        "class_count",
        "label_noise",
        "cluster_std",
        "center_spread",
        "test_n",
        "images_path",
        "labels_path",
        "limit",
    },
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


@dataclass
class DataSpec:
    """How the CLI should materialize the training and test datasets."""

    kind: str = "blobs"
    n: int = 2000
    d: int = 2
    class_count: int = 2
    label_noise: float = 0.0
    cluster_std: float = 1.0
    center_spread: float = 2.0
    test_n: int = 1000
    images_path: str | None = None
    labels_path: str | None = None
    limit: int = 1000


class _Section:
    def __init__(self, parser, name):
        self.name = name
        self.raw = dict(parser[name]) if parser.has_section(name) else {}

    def _get(self, key, default, conv, what):
        if key not in self.raw:
            return default
        text = self.raw[key].strip()
        try:
            return conv(text)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"[{self.name}] {key}: cannot parse {text!r} as {what}") from exc

    def integer(self, key, default):
        return self._get(key, default, int, "an integer")

    def real(self, key, default):
        return self._get(key, default, float, "a number")

    def boolean(self, key, default):
        return self._get(key, default, lambda t: _BOOL[t.lower()], "a boolean")

    def text(self, key, default):
        return self._get(key, default, str, "text")

    def auto_or_int(self, key, default):
        conv = lambda t: None if t.lower() == "auto" else int(t)
        return self._get(key, default, conv, "an integer or 'auto'")

    def auto_or_real(self, key, default):
        conv = lambda t: None if t.lower() == "auto" else float(t)
        return self._get(key, default, conv, "a number or 'auto'")

    def choice(self, key, default, mapping):
        conv = lambda t: mapping[t.lower()]
        return self._get(key, default, conv, f"one of {sorted(mapping)}")


def parse_config(path: str) -> tuple[TrainConfig, DataSpec]:
    """Parse an INI file into (TrainConfig, DataSpec); any unknown key is an error."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}] of {path}")

    train = _Section(parser, "train")
    opt = _Section(parser, "optimizer")
    rigl = _Section(parser, "rigl")
    sparsity = _Section(parser, "sparsity")
    model = _Section(parser, "model")
    data = _Section(parser, "data")

    plan = SparsityPlan(
        target_rate=sparsity.real("target_rate", 0.0),
        distribution=sparsity.choice(
            "distribution",
            Distribution.ERK,
            {"uniform": Distribution.UNIFORM, "erk": Distribution.ERK},
        ),
        fc_fixed_rate=sparsity.auto_or_real("fc_fixed_rate", None),
    )
    rigl_cfg = RigLConfig(
        delta_t=rigl.integer("delta_t", 100),
        t_end=rigl.auto_or_int("t_end", None),
        drop_fraction_init=rigl.real("drop_fraction_init", 0.3),
        plan=plan,
    )
    optimizer = OptimizerConfig(
        lr=opt.real("lr", 0.05),
        momentum=opt.real("momentum", 0.9),
        weight_decay=opt.real("weight_decay", 5e-4),
        nesterov=opt.boolean("nesterov", True),
        cosine_anneal=opt.boolean("cosine_anneal", True),
    )

    hidden_text = model.text("hidden", "64,64")
    try:
        hidden = tuple(int(tok) for tok in hidden_text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"[model] hidden: cannot parse {hidden_text!r}") from exc

    try:
        cfg = TrainConfig(
            total_epochs=train.integer("total_epochs", 60),
            warmup_epochs=train.auto_or_int("warmup_epochs", None),
            selection_interval=train.integer("selection_interval", 20),
            coreset_ratio=train.real("coreset_ratio", 1.0),
            sp_weight=train.real("sp_weight", 0.1),
            use_sp=train.boolean("use_sp", True),
            variant=train.choice(
                "variant", Variant.CUT, {"trim": Variant.TRIM, "cut": Variant.CUT}
            ),
            selector=train.choice(
                "selector",
                SelectorKind.EL2N,
                {
                    "el2n": SelectorKind.EL2N,
                    "moderate": SelectorKind.MODERATE,
                    "gradmatch_omp": SelectorKind.GRADMATCH_OMP,
                },
            ),
            rigl=rigl_cfg,
            optimizer=optimizer,
            batch_size=train.integer("batch_size", 128),
            seed=train.integer("seed", 0),
            hidden_widths=hidden,
            omp_per_class=train.boolean("omp_per_class", False),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    kind = data.choice(
        "kind", "blobs", {"blobs": "blobs", "two_moons": "two_moons", "idx": "idx"}
    )
    spec = DataSpec(
        kind=kind,
        n=data.integer("n", 2000),
        d=data.integer("d", 2),
        class_count=data.integer("class_count", 2),
        label_noise=data.real("label_noise", 0.0),
        cluster_std=data.real("cluster_std", 1.0),
        center_spread=data.real("center_spread", 2.0),
        test_n=data.integer("test_n", 1000),
        images_path=data.text("images_path", None),
        labels_path=data.text("labels_path", None),
        limit=data.integer("limit", 1000),
    )
    if spec.kind == "idx" and (not spec.images_path or not spec.labels_path):
        raise ConfigError("idx data needs images_path and labels_path")
    return cfg, spec

"""Dataset container, synthetic generators, IDX loading, label-noise injection."""

from dataclasses import dataclass
from enum import Enum
import struct

import numpy as np

from .errors import ConfigError, FormatError, InvalidInputError


class SyntheticKind(Enum):
    BLOBS = "blobs"
    TWO_MOONS = "two_moons"


@dataclass
class Dataset:
    """Feature matrix (N x d), integer labels, optional noise ground truth."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "dataset"
    noise_flags: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvalidInputError("features must be 2-D")
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise InvalidInputError("labels must have one entry per row")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidInputError("labels must lie in [0, class_count)")
        if self.noise_flags is not None:
            self.noise_flags = np.asarray(self.noise_flags, dtype=bool)
            if self.noise_flags.shape != (n,):
                raise InvalidInputError("noise_flags must have one entry per row")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _balanced_counts(n: int, class_count: int) -> list[int]:
    base = n // class_count
    counts = [base + (1 if c < n % class_count else 0) for c in range(class_count)]
    return counts


def generate_synthetic(
    kind: SyntheticKind,
    n: int,
    class_count: int,
    rng: np.random.Generator,
    d: int = 2,
    cluster_std: float = 1.0,
    centers: np.ndarray | None = None,
    center_box: tuple = (-4.0, 4.0),
    radius: float = 1.0,
    moon_noise: float = 0.1,
    name: str | None = None,
) -> Dataset:
    """Deterministic toy classification data with classes balanced within 1.

    Blobs: Gaussian clusters around per-class centers (random in center_box
    unless given). TwoMoons: the classic interleaved half circles in 2-D,
    scaled by radius with Gaussian jitter; class_count must be 2.
    """
    if n < class_count:
        raise InvalidInputError("need at least one sample per class")
    counts = _balanced_counts(n, class_count)
    if kind is SyntheticKind.BLOBS:
        if centers is None:
            centers = rng.uniform(center_box[0], center_box[1], size=(class_count, d))
        else:
            centers = np.asarray(centers, dtype=np.float64)
            if centers.shape != (class_count, d):
                raise InvalidInputError("centers must be (class_count, d)")
        feats, labels = [], []
        for c, count in enumerate(counts):
            feats.append(centers[c] + rng.normal(0.0, cluster_std, size=(count, d)))
            labels.append(np.full(count, c, dtype=np.int64))
        features = np.vstack(feats)
        label_arr = np.concatenate(labels)
    elif kind is SyntheticKind.TWO_MOONS:
        if class_count != 2:
            raise InvalidInputError("two moons is a 2-class dataset")
        angles0 = rng.uniform(0.0, np.pi, size=counts[0])
        angles1 = rng.uniform(0.0, np.pi, size=counts[1])
        outer = radius * np.stack([np.cos(angles0), np.sin(angles0)], axis=1)
        inner = np.stack(
            [radius * (1.0 - np.cos(angles1)), radius * (0.5 - np.sin(angles1))], axis=1
        )
        features = np.vstack([outer, inner]) + rng.normal(
            0.0, moon_noise, size=(n, 2)
        )
        label_arr = np.concatenate(
            [np.zeros(counts[0], dtype=np.int64), np.ones(counts[1], dtype=np.int64)]
        )
    else:
        raise InvalidInputError(f"unknown synthetic kind {kind}")
    order = rng.permutation(n)
    return Dataset(
        features[order],
        label_arr[order],
        class_count,
        name or kind.value,
    )


def _read_exact(data: bytes, offset: int, count: int, what: str) -> bytes:
    if offset + count > len(data):
        raise FormatError(f"truncated IDX file while reading {what}", offset=len(data))
    return data[offset : offset + count]


def _parse_idx(path: str, magic_expected: int, n_dims: int):
    with open(path, "rb") as fh:
        data = fh.read()
    magic = struct.unpack(">I", _read_exact(data, 0, 4, "magic"))[0]
    if magic != magic_expected:
        raise FormatError(
            f"bad IDX magic 0x{magic:08X}, expected 0x{magic_expected:08X} in {path}",
            offset=0,
        )
    dims = []
    for i in range(n_dims):
        off = 4 + 4 * i
        dims.append(struct.unpack(">I", _read_exact(data, off, 4, f"dimension {i}"))[0])
    header = 4 + 4 * n_dims
    expected = header + int(np.prod(dims, dtype=np.int64)) if dims else header
    if len(data) < expected:
        raise FormatError(
            f"IDX payload shorter than declared sizes {dims} in {path}", offset=len(data)
        )
    if len(data) > expected:
        raise FormatError(
            f"IDX file has trailing bytes beyond declared sizes {dims} in {path}",
            offset=expected,
        )
    payload = np.frombuffer(data, dtype=np.uint8, offset=header)
    return dims, payload


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_idx_subset(images_path: str, labels_path: str, limit: int) -> Dataset:
    """First min(limit, count) samples of an IDX image/label file pair.

    Pixels are scaled to [0,1] float64 and flattened to rows * cols features.
    """
    if limit < 0:
        raise InvalidInputError("limit must be non-negative")
    (n_img, rows, cols), pixels = _parse_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,), raw_labels = _parse_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise FormatError(
            f"image count {n_img} != label count {n_lab}", offset=4
        )
    take = min(limit, n_img)
    d = rows * cols
    features = pixels[: take * d].astype(np.float64).reshape(take, d) / 255.0
    labels = raw_labels[:take].astype(np.int64)
    class_count = int(raw_labels.max()) + 1 if n_lab else 1
    return Dataset(features, labels, max(class_count, 1), name="idx")


def inject_label_noise(dataset: Dataset, rate: float, rng: np.random.Generator) -> Dataset:
    """Corrupt floor(rate * N) uniformly chosen labels to a different class.

    Returns a new Dataset whose noise_flags mark exactly the corrupted rows.
    """
    if not 0.0 <= rate <= 1.0:
        raise InvalidInputError("noise rate must be in [0,1]")
    if dataset.class_count < 2:
        raise ConfigError("label noise needs at least 2 classes")
    n = dataset.n
    k = int(np.floor(rate * n))
    flags = np.zeros(n, dtype=bool)
    labels = dataset.labels.copy()
    if k:
        chosen = rng.choice(n, size=k, replace=False)
        flags[chosen] = True
        # draw from C-1 alternatives, shifting past the original label
        draws = rng.integers(0, dataset.class_count - 1, size=k)
        originals = labels[chosen]
        labels[chosen] = np.where(draws >= originals, draws + 1, draws)
    return Dataset(
        dataset.features.copy(),
        labels,
        dataset.class_count,
        name=dataset.name,
        noise_flags=flags,
    )

"""Checkpoint binary format, RNG state capture, and the metrics CSV writer.

Checkpoint layout: magic "SWST", u32 little-endian version, a sequence of
u64-length-prefixed sections (counters, dims, weights as little-endian f64,
masks packed 8 per byte LSB-first, coreset, preserved logits, RNG state), and
a trailing CRC32 over everything before it. The version is checked before the
checksum so a reader can reject future formats without a false corruption
report. All file writes go through a temp file and atomic rename.
"""

from dataclasses import dataclass, field
import os
import struct
import zlib

import numpy as np

from .errors import CorruptionError, FormatError, InvalidInputError, UnsupportedVersionError
from .model import PruneScope

MAGIC = b"SWST"
FORMAT_VERSION = 1

_SCOPE_CODES = {PruneScope.FC_ONLY: 0, PruneScope.FULL_NETWORK: 1}
_SCOPE_FROM_CODE = {v: k for k, v in _SCOPE_CODES.items()}


@dataclass
class Checkpoint:
    """Everything needed to resume a run bit-exactly."""

    epoch: int
    step: int
    prune_scope: PruneScope
    weights: list
    biases: list
    masks: list
    vel_w: list
    vel_b: list
    coreset_indices: np.ndarray
    coreset_weights: np.ndarray
    coreset_alpha: float
    preserved: dict = field(default_factory=dict)
    rng_state: dict | None = None
    version: int = FORMAT_VERSION

    def same_as(self, other: "Checkpoint") -> bool:
        """Bit-exact equality."""
        def arrays_equal(xs, ys):
            return len(xs) == len(ys) and all(
                x.shape == y.shape and np.array_equal(x, y, equal_nan=True)
                for x, y in zip(xs, ys)
            )
        return (
            self.version == other.version
            and self.epoch == other.epoch
            and self.step == other.step
            and self.prune_scope == other.prune_scope
            and arrays_equal(self.weights, other.weights)
            and arrays_equal(self.biases, other.biases)
            and arrays_equal(self.masks, other.masks)
            and arrays_equal(self.vel_w, other.vel_w)
            and arrays_equal(self.vel_b, other.vel_b)
            and np.array_equal(self.coreset_indices, other.coreset_indices)
            and np.array_equal(self.coreset_weights, other.coreset_weights)
            and self.coreset_alpha == other.coreset_alpha
            and sorted(self.preserved) == sorted(other.preserved)
            and all(
                np.array_equal(self.preserved[k], other.preserved[k])
                for k in self.preserved
            )
            and self.rng_state == other.rng_state
        )


def capture_rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    if state.get("bit_generator") != "PCG64":
        raise InvalidInputError("only PCG64 generators are checkpointable")
    return state


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def _pack_u64(value: int) -> bytes:
    return struct.pack("<Q", value)


def _section(payload: bytes) -> bytes:
    return _pack_u64(len(payload)) + payload


def _f64_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _i64_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<i8").tobytes()


def _encode(ckpt: Checkpoint) -> bytes:
    n_layers = len(ckpt.weights)
    if not (
        len(ckpt.biases) == len(ckpt.masks) == len(ckpt.vel_w) == len(ckpt.vel_b) == n_layers
    ):
        raise InvalidInputError("per-layer checkpoint fields must align")
    if ckpt.rng_state is None:
        raise InvalidInputError("checkpoint needs an rng state")

    meta = struct.pack(
        "<QQIBd",
        ckpt.epoch,
        ckpt.step,
        n_layers,
        _SCOPE_CODES[ckpt.prune_scope],
        ckpt.coreset_alpha,
    )

    dims = b"".join(struct.pack("<II", w.shape[0], w.shape[1]) for w in ckpt.weights)

    params = b"".join(_f64_bytes(w) for w in ckpt.weights) + b"".join(
        _f64_bytes(b) for b in ckpt.biases
    )

    masks = b"".join(
        np.packbits(
            np.asarray(m, dtype=np.float64).reshape(-1) != 0.0, bitorder="little"
        ).tobytes()
        for m in ckpt.masks
    )

    velocities = b"".join(_f64_bytes(v) for v in ckpt.vel_w) + b"".join(
        _f64_bytes(v) for v in ckpt.vel_b
    )

    coreset = (
        _pack_u64(len(ckpt.coreset_indices))
        + _i64_bytes(ckpt.coreset_indices)
        + _f64_bytes(ckpt.coreset_weights)
    )

    n_classes = ckpt.weights[-1].shape[0]
    logits_parts = [_pack_u64(len(ckpt.preserved))]
    for sample_id in sorted(ckpt.preserved):
        vec = np.asarray(ckpt.preserved[sample_id], dtype=np.float64)
        if vec.shape != (n_classes,):
            raise InvalidInputError("preserved logits must match the class count")
        logits_parts.append(struct.pack("<q", sample_id) + _f64_bytes(vec))
    logits = b"".join(logits_parts)

    inner = ckpt.rng_state["state"]
    rng_bytes = (
        int(inner["state"]).to_bytes(16, "little")
        + int(inner["inc"]).to_bytes(16, "little")
        + struct.pack("<BI", int(ckpt.rng_state["has_uint32"]), int(ckpt.rng_state["uinteger"]))
    )

    body = MAGIC + struct.pack("<I", ckpt.version)
    for payload in (meta, dims, params, masks, velocities, coreset, logits, rng_bytes):
        body += _section(payload)
    return body + struct.pack("<I", zlib.crc32(body))


class _Cursor:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.data):
            raise FormatError(f"checkpoint truncated while reading {what}", offset=self.offset)
        out = self.data[self.offset : self.offset + count]
        self.offset += count
        return out

    def section(self, what: str) -> "_Cursor":
        (length,) = struct.unpack("<Q", self.take(8, f"{what} length"))
        payload = self.take(length, what)
        return _Cursor(payload, 0)


def _decode(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", offset=0)
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint format version {version} is not supported", offset=4
        )
    if len(data) < 12:
        raise FormatError("checkpoint truncated before checksum", offset=len(data))
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise CorruptionError("checkpoint payload fails its CRC32 check", offset=len(data) - 4)

    cur = _Cursor(data[:-4], 8)

    meta = cur.section("meta")
    epoch, step, n_layers, scope_code, alpha = struct.unpack("<QQIBd", meta.take(29, "meta"))
    if scope_code not in _SCOPE_FROM_CODE:
        raise FormatError(f"unknown prune scope code {scope_code}", offset=8)

    dims_cur = cur.section("dims")
    dims = []
    for i in range(n_layers):
        dims.append(struct.unpack("<II", dims_cur.take(8, f"layer {i} dims")))

    params_cur = cur.section("parameters")
    weights, biases = [], []
    for out_d, in_d in dims:
        raw = params_cur.take(8 * out_d * in_d, "weights")
        weights.append(np.frombuffer(raw, dtype="<f8").reshape(out_d, in_d).copy())
    for out_d, _ in dims:
        raw = params_cur.take(8 * out_d, "biases")
        biases.append(np.frombuffer(raw, dtype="<f8").copy())

    masks_cur = cur.section("masks")
    masks = []
    for out_d, in_d in dims:
        size = out_d * in_d
        raw = masks_cur.take((size + 7) // 8, "masks")
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:size]
        masks.append(bits.astype(np.float64).reshape(out_d, in_d))

    vel_cur = cur.section("velocities")
    vel_w, vel_b = [], []
    for out_d, in_d in dims:
        raw = vel_cur.take(8 * out_d * in_d, "weight velocities")
        vel_w.append(np.frombuffer(raw, dtype="<f8").reshape(out_d, in_d).copy())
    for out_d, _ in dims:
        raw = vel_cur.take(8 * out_d, "bias velocities")
        vel_b.append(np.frombuffer(raw, dtype="<f8").copy())

    core_cur = cur.section("coreset")
    (core_n,) = struct.unpack("<Q", core_cur.take(8, "coreset count"))
    idx = np.frombuffer(core_cur.take(8 * core_n, "coreset indices"), dtype="<i8").copy()
    wts = np.frombuffer(core_cur.take(8 * core_n, "coreset weights"), dtype="<f8").copy()

    logits_cur = cur.section("preserved logits")
    (n_preserved,) = struct.unpack("<Q", logits_cur.take(8, "preserved count"))
    n_classes = dims[-1][0]
    preserved = {}
    for _ in range(n_preserved):
        (sample_id,) = struct.unpack("<q", logits_cur.take(8, "preserved id"))
        vec = np.frombuffer(
            logits_cur.take(8 * n_classes, "preserved logits"), dtype="<f8"
        ).copy()
        preserved[int(sample_id)] = vec

    rng_cur = cur.section("rng state")
    state_int = int.from_bytes(rng_cur.take(16, "rng state"), "little")
    inc_int = int.from_bytes(rng_cur.take(16, "rng inc"), "little")
    has_uint32, uinteger = struct.unpack("<BI", rng_cur.take(5, "rng tail"))
    rng_state = {
        "bit_generator": "PCG64",
        "state": {"state": state_int, "inc": inc_int},
        "has_uint32": int(has_uint32),
        "uinteger": int(uinteger),
    }

    return Checkpoint(
        epoch=int(epoch),
        step=int(step),
        prune_scope=_SCOPE_FROM_CODE[scope_code],
        weights=weights,
        biases=biases,
        masks=masks,
        vel_w=vel_w,
        vel_b=vel_b,
        coreset_indices=idx,
        coreset_weights=wts,
        coreset_alpha=float(alpha),
        preserved=preserved,
        rng_state=rng_state,
        version=int(version),
    )


def _atomic_write(path: str, payload: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_checkpoint(path: str, ckpt: Checkpoint):
    _atomic_write(path, _encode(ckpt))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    return _decode(data)


METRICS_HEADER = "epoch,ce_loss,sp_loss,total_loss,test_acc,sparsity,coreset_size,noise_frac,selection_event"


def _fmt(value) -> str:
    if value is None:
        return "nan"
    return f"{value:.9g}"


def emit_metrics(path: str, series) -> None:
    """Write EpochMetrics rows as CSV with 9-significant-digit reals, atomically."""
    lines = [METRICS_HEADER]
    for m in series:
        lines.append(
            ",".join(
                [
                    str(m.epoch),
                    _fmt(m.ce_loss),
                    _fmt(m.sp_loss),
                    _fmt(m.total_loss),
                    _fmt(m.test_accuracy),
                    _fmt(m.scoped_sparsity),
                    str(m.coreset_size),
                    _fmt(m.coreset_noise_fraction),
                    str(int(bool(m.selection_event))),
                ]
            )
        )
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))

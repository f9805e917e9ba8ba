"""Synthetic Gaussian-mixture classification data and the RLDD file format.

Class means sit on a deterministic axis-aligned lattice scaled by
class_sep: classes come in pairs that share a primary axis and differ
only by a small offset along a partner axis, so each class has one
strongly correlated sibling (the interesting regime for correlation-aware
distillation) and the difficulty is controlled by noise_sigma.

Every sample is drawn from its own PCG32 stream keyed by (seed, class,
sample index), so generation is order-independent and bit-reproducible.
Features are quantized to float32 at generation time; the in-memory
arrays and the RLDD file contents are therefore exactly equivalent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IoError, ShapeError
from .rng import PURPOSE_DATA, Pcg32

__all__ = [
    "DatasetSpec",
    "Dataset",
    "class_means",
    "generate_dataset",
    "nearest_mean_accuracy",
    "save_dataset",
    "load_dataset",
]

DATASET_MAGIC = b"RLDD"
DATASET_VERSION = 1

# lattice constants: primary-axis unit and within-pair offset, in units of
# class_sep
_LEVEL_UNIT = 1.0
_PAIR_OFFSET = 0.5

_VAL_INDEX_BASE = 0x80000000


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int
    dim: int
    train_per_class: int
    val_per_class: int
    class_sep: float
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.train_per_class < 1 or self.val_per_class < 1:
            raise ConfigError("per-class sample counts must be >= 1")
        if not self.class_sep > 0:
            raise ConfigError("class_sep must be > 0")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 bits")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int
    spec: DatasetSpec | None = None

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]


def class_means(spec: DatasetSpec) -> np.ndarray:
    """Deterministic lattice of class means, shape (C, dim).

    Class c = 2k + s sits at class_sep * (level * e_i +/- 0.5 * e_j) with
    axes i, j = 2k, 2k+1 (mod dim) and level incremented on each wrap, so
    means are always pairwise distinct.
    """
    means = np.zeros((spec.num_classes, spec.dim))
    for c in range(spec.num_classes):
        k = c // 2
        sign = 1.0 if c % 2 == 0 else -1.0
        i = (2 * k) % spec.dim
        j = (2 * k + 1) % spec.dim
        level = 1.0 + (2 * k) // spec.dim
        means[c, i] += _LEVEL_UNIT * level
        means[c, j] += _PAIR_OFFSET * sign
    return means * spec.class_sep


def _sample_stream(spec: DatasetSpec, label: int, index: int) -> Pcg32:
    return Pcg32(spec.seed, PURPOSE_DATA | (label << 32) | index)


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Draw the full train/val sets; a pure function of the spec."""
    means = class_means(spec)

    def draw(per_class: int, index_base: int) -> tuple[np.ndarray, np.ndarray]:
        x = np.empty((spec.num_classes * per_class, spec.dim))
        y = np.empty(spec.num_classes * per_class, dtype=np.int64)
        row = 0
        for c in range(spec.num_classes):
            for idx in range(per_class):
                rng = _sample_stream(spec, c, index_base + idx)
                noise = np.asarray(rng.next_normals(spec.dim))
                x[row] = means[c] + spec.noise_sigma * noise
                y[row] = c
                row += 1
        return x.astype(np.float32).astype(np.float64), y

    x_train, y_train = draw(spec.train_per_class, 0)
    x_val, y_val = draw(spec.val_per_class, _VAL_INDEX_BASE)
    return Dataset(x_train, y_train, x_val, y_val, spec.num_classes, spec)


def nearest_mean_accuracy(ds: Dataset) -> float:
    """Accuracy of classifying the val split by the nearest generating mean.

    The reference difficulty baseline for a generated dataset; requires
    the generation spec.
    """
    if ds.spec is None:
        raise ConfigError("nearest-mean baseline needs the generating spec")
    means = class_means(ds.spec)
    d2 = ((ds.x_val[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    pred = d2.argmin(axis=1)
    return float((pred == ds.y_val).mean())


def save_dataset(path, ds: Dataset) -> None:
    header = struct.pack(
        "<4sHIIII",
        DATASET_MAGIC,
        DATASET_VERSION,
        ds.num_classes,
        ds.dim,
        ds.x_train.shape[0],
        ds.x_val.shape[0],
    )
    dim = ds.dim

    def pack(x: np.ndarray, y: np.ndarray) -> bytes:
        # record layout: dim little-endian f32 features, then one u16 label
        n = x.shape[0]
        feat = np.ascontiguousarray(x.astype("<f4")).view(np.uint8).reshape(n, 4 * dim)
        lab = np.ascontiguousarray(y.astype("<u2")).view(np.uint8).reshape(n, 2)
        return np.concatenate([feat, lab], axis=1).tobytes()

    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(pack(ds.x_train, ds.y_train))
            fh.write(pack(ds.x_val, ds.y_val))
    except OSError as exc:
        raise IoError(f"cannot write dataset {path}: {exc}") from exc


def load_dataset(path) -> Dataset:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read dataset {path}: {exc}") from exc
    if blob[:4] != DATASET_MAGIC:
        raise IoError(f"{path}: bad dataset magic {blob[:4]!r}")
    magic, version, num_classes, dim, train_count, val_count = struct.unpack_from("<4sHIIII", blob)
    if version != DATASET_VERSION:
        raise IoError(f"{path}: unsupported dataset version {version}")
    rec_size = 4 * dim + 2
    expected = 22 + rec_size * (train_count + val_count)
    if len(blob) != expected:
        raise IoError(f"{path}: truncated dataset file ({len(blob)} bytes, expected {expected})")
    raw = np.frombuffer(blob, dtype=np.uint8, offset=22).reshape(train_count + val_count, rec_size)

    def unpack(rec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        feat = np.ascontiguousarray(rec[:, : 4 * dim]).view("<f4").reshape(-1, dim)
        lab = np.ascontiguousarray(rec[:, 4 * dim :]).view("<u2").ravel()
        return feat.astype(np.float64), lab.astype(np.int64)

    x_train, y_train = unpack(raw[:train_count])
    x_val, y_val = unpack(raw[train_count:])
    if y_train.size and int(max(y_train.max(), y_val.max())) >= num_classes:
        raise IoError(f"{path}: label exceeds declared class count")
    return Dataset(x_train, y_train, x_val, y_val, int(num_classes))

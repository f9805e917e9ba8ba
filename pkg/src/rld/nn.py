"""Small feed-forward classifier with manual backpropagation.

Parameters are float64 throughout. Initialization draws He-scaled normals
from one PCG32 stream per layer, so a given MlpSpec always produces the
same network. Checkpoints round-trip through the RLDC file format
bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheError, ConfigError, IoError, ShapeError
from .rng import PURPOSE_INIT, Pcg32

__all__ = ["MlpSpec", "Mlp", "ForwardCache", "Checkpoint", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_MAGIC = b"RLDC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input dim to class count, with the init stream seed."""

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ConfigError("need at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError(f"all widths must be >= 1, got {self.layer_widths}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if not 0 <= int(self.init_seed) < 2**64:
            raise ConfigError("init_seed must fit in 64 bits")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]


@dataclass
class ForwardCache:
    inputs: np.ndarray
    hidden: list[np.ndarray]  # post-ReLU activations per hidden layer
    version: int


class Mlp:
    """Affine + ReLU stack; the final layer is affine with no softmax."""

    def __init__(self, spec: MlpSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.spec = spec
        self.weights = weights
        self.biases = biases
        self.version = 0

    @classmethod
    def init(cls, spec: MlpSpec) -> "Mlp":
        """He-normal weights, zero biases; stream key (init_seed, layer)."""
        weights, biases = [], []
        for layer, (fan_in, fan_out) in enumerate(zip(spec.layer_widths, spec.layer_widths[1:])):
            rng = Pcg32(spec.init_seed, PURPOSE_INIT | layer)
            draws = np.asarray(rng.next_normals(fan_in * fan_out), dtype=np.float64)
            weights.append(draws.reshape(fan_in, fan_out) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases)

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(f"expected (B, {self.spec.input_dim}) features, got {x.shape}")
        hidden: list[np.ndarray] = []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
            hidden.append(a)
        logits = a @ self.weights[-1] + self.biases[-1]
        return logits, ForwardCache(x, hidden, self.version)

    def backward(self, cache: ForwardCache, logit_grads: np.ndarray):
        """Parameter gradients given d loss / d logits for the cached batch."""
        if cache.version != self.version:
            raise CacheError("forward cache is stale; parameters changed since forward()")
        delta = np.asarray(logit_grads, dtype=np.float64)
        if delta.shape != (cache.inputs.shape[0], self.num_classes):
            raise ShapeError(f"logit gradient shape {delta.shape} does not match batch")
        acts = [cache.inputs] + cache.hidden
        grads = []
        for layer in range(len(self.weights) - 1, -1, -1):
            a = acts[layer]
            grads.append((a.T @ delta, delta.sum(axis=0)))
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (acts[layer] > 0.0)
        grads.reverse()
        return grads

    def apply_update(self, deltas) -> None:
        """Subtract per-parameter deltas; invalidates existing caches."""
        for (w, b), (dw, db) in zip(zip(self.weights, self.biases), deltas):
            w -= dw
            b -= db
        self.version += 1


@dataclass
class Checkpoint:
    """Frozen parameters plus training metadata (plain key=value strings)."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Mlp, metadata: dict[str, str] | None = None) -> "Checkpoint":
        return cls(
            model.spec,
            [w.copy() for w in model.weights],
            [b.copy() for b in model.biases],
            dict(metadata or {}),
        )

    def to_model(self) -> Mlp:
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def param_digest(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(w.tobytes())
            h.update(b.tobytes())
        return h.digest()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    spec = ckpt.spec
    parts = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION)]
    parts.append(struct.pack("<I", len(spec.layer_widths)))
    parts.append(struct.pack(f"<{len(spec.layer_widths)}I", *spec.layer_widths))
    parts.append(struct.pack("<B", 0))  # activation 0 = relu
    parts.append(struct.pack("<Q", spec.init_seed))
    for w, b in zip(ckpt.weights, ckpt.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    meta = "".join(f"{k}={v}\n" for k, v in sorted(ckpt.metadata.items()))
    parts.append(meta.encode("utf-8"))
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != CHECKPOINT_MAGIC:
        raise IoError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise IoError(f"{path}: unsupported checkpoint version {version}")
    off = 6
    (n_widths,) = struct.unpack_from("<I", blob, off)
    off += 4
    widths = struct.unpack_from(f"<{n_widths}I", blob, off)
    off += 4 * n_widths
    (activation,) = struct.unpack_from("<B", blob, off)
    off += 1
    (init_seed,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if activation != 0:
        raise IoError(f"{path}: unknown activation code {activation}")
    spec = MlpSpec(tuple(widths), "relu", init_seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(
            fan_in, fan_out
        )
        off += 8 * fan_in * fan_out
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    metadata: dict[str, str] = {}
    for line in blob[off:].decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    return Checkpoint(spec, weights, biases, metadata)

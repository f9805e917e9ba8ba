"""Deterministic SGD training: teacher pretraining and student distillation.

Single-threaded, fixed batch order within each seeded epoch shuffle, so
identical inputs give bit-identical checkpoints and metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batch import batch_loss_and_grad
from .data import Dataset
from .errors import ConfigError, IncompatibleTeacher, ShapeError
from .losses import DistillSpec, Method
from .nn import Checkpoint, Mlp, MlpSpec
from .rng import PURPOSE_SHUFFLE, Pcg32

__all__ = ["TrainConfig", "EpochLog", "EvalResult", "train_teacher", "distill_student", "evaluate"]

_EVAL_BATCH = 512


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 60
    lr: float = 0.05
    lr_decay_epochs: tuple[int, ...] = (38, 45, 53)
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    shuffle_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must be in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if list(self.lr_decay_epochs) != sorted(self.lr_decay_epochs):
            raise ConfigError("lr_decay_epochs must be sorted")

    def lr_at(self, epoch: int) -> float:
        """Step-decay schedule: multiply by the factor at each listed epoch."""
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay_factor**drops


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    total: float
    ce: float
    scd: float
    mcd: float
    kd: float
    masked_all: int
    train_top1: float
    val_top1: float


@dataclass(frozen=True)
class EvalResult:
    top1: float
    logits: np.ndarray


def evaluate(model, x: np.ndarray, y: np.ndarray) -> EvalResult:
    """Top-1 accuracy (lowest-index argmax tie-break) plus raw logits."""
    if isinstance(model, Checkpoint):
        model = model.to_model()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] != y.shape[0]:
        raise ShapeError("feature/label counts differ")
    chunks = [model.forward(x[i : i + _EVAL_BATCH])[0] for i in range(0, x.shape[0], _EVAL_BATCH)]
    logits = np.concatenate(chunks, axis=0) if chunks else np.empty((0, model.num_classes))
    top1 = float((logits.argmax(axis=1) == y).mean()) if y.size else 0.0
    return EvalResult(top1, logits)


def _run_sgd(
    ds: Dataset,
    model: Mlp,
    cfg: TrainConfig,
    spec: DistillSpec,
    teacher: Mlp | None,
) -> list[EpochLog]:
    n = ds.x_train.shape[0]
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(model.weights, model.biases)]
    logs: list[EpochLog] = []
    needs_teacher = spec.method is not Method.CE_ONLY
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = list(range(n))
        Pcg32(cfg.shuffle_seed, PURPOSE_SHUFFLE | epoch).shuffle(order)
        order = np.asarray(order)
        sums = np.zeros(5)  # total, ce, scd, mcd, kd weighted by batch size
        masked_all = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = ds.x_train[idx]
            yb = ds.y_train[idx]
            logits, cache = model.forward(xb)
            zt = teacher.forward(xb)[0] if needs_teacher else None
            stats, g = batch_loss_and_grad(zt, logits, yb, spec)
            b = xb.shape[0]
            sums += b * np.array([stats.total, stats.ce, stats.scd, stats.mcd, stats.kd])
            masked_all += stats.masked_all
            grads = model.backward(cache, g / b)
            deltas = []
            for (w, bias), (dw, db), vel in zip(
                zip(model.weights, model.biases), grads, velocity
            ):
                vw = vel[0]
                vb = vel[1]
                vw *= cfg.momentum
                vw += dw + cfg.weight_decay * w
                vb *= cfg.momentum
                vb += db + cfg.weight_decay * bias
                deltas.append((lr * vw, lr * vb))
            model.apply_update(deltas)
        means = sums / n
        train_top1 = evaluate(model, ds.x_train, ds.y_train).top1
        val_top1 = evaluate(model, ds.x_val, ds.y_val).top1
        logs.append(
            EpochLog(
                epoch,
                float(means[0]),
                float(means[1]),
                float(means[2]),
                float(means[3]),
                float(means[4]),
                masked_all,
                train_top1,
                val_top1,
            )
        )
    return logs


def _final_metadata(ds: Dataset, logs: list[EpochLog], model: Mlp) -> dict[str, str]:
    meta = {"epochs": str(len(logs))}
    if logs:
        meta["train_top1"] = f"{logs[-1].train_top1:.17g}"
        meta["val_top1"] = f"{logs[-1].val_top1:.17g}"
    else:
        meta["train_top1"] = f"{evaluate(model, ds.x_train, ds.y_train).top1:.17g}"
        meta["val_top1"] = f"{evaluate(model, ds.x_val, ds.y_val).top1:.17g}"
    return meta


def _check_model_fits(ds: Dataset, spec: MlpSpec) -> None:
    if spec.input_dim != ds.dim:
        raise ConfigError(f"model input width {spec.input_dim} != feature dim {ds.dim}")
    if spec.num_classes != ds.num_classes:
        raise ConfigError(f"model output width {spec.num_classes} != classes {ds.num_classes}")


def train_teacher(ds: Dataset, mlp_spec: MlpSpec, cfg: TrainConfig) -> Checkpoint:
    """Cross-entropy-only training; returns the final checkpoint."""
    _check_model_fits(ds, mlp_spec)
    model = Mlp.init(mlp_spec)
    logs = _run_sgd(ds, model, cfg, DistillSpec(method=Method.CE_ONLY), None)
    meta = _final_metadata(ds, logs, model)
    meta["method"] = Method.CE_ONLY.value
    return Checkpoint.from_model(model, meta)


def distill_student(
    ds: Dataset,
    teacher: Checkpoint,
    student_spec: MlpSpec,
    cfg: TrainConfig,
    dspec: DistillSpec,
) -> tuple[Checkpoint, list[EpochLog]]:
    """Train a student against a frozen teacher; per-epoch logs included."""
    if teacher.num_classes != ds.num_classes:
        raise IncompatibleTeacher(
            f"teacher has {teacher.num_classes} classes, dataset has {ds.num_classes}"
        )
    if teacher.spec.input_dim != ds.dim:
        raise IncompatibleTeacher(
            f"teacher input width {teacher.spec.input_dim} != feature dim {ds.dim}"
        )
    _check_model_fits(ds, student_spec)
    teacher_model = teacher.to_model()
    digest_before = teacher.param_digest()
    model = Mlp.init(student_spec)
    logs = _run_sgd(ds, model, cfg, dspec, teacher_model)
    if Checkpoint.from_model(teacher_model).param_digest() != digest_before:
        raise RuntimeError("teacher parameters changed during distillation")
    meta = _final_metadata(ds, logs, model)
    meta.update(
        {
            "method": dspec.method.value,
            "alpha": f"{dspec.alpha:.17g}",
            "beta": f"{dspec.beta:.17g}",
            "tau": f"{dspec.tau:.17g}",
            "mask_strategy": dspec.mask_strategy.value,
        }
    )
    return Checkpoint.from_model(model, meta), logs

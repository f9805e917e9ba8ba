"""Refined logit distillation: losses, analytic gradients, and a
deterministic desk-scale training and experiment harness."""

from .core import ProbVector, cross_entropy, kl_div, log_softmax, softmax
from .data import Dataset, DatasetSpec, generate_dataset, load_dataset, save_dataset
from .losses import (
    DistillSpec,
    LossBreakdown,
    Method,
    correct_logits,
    dkd_loss,
    finite_diff_check,
    grad_ce,
    grad_kd,
    grad_mcd,
    grad_scd,
    grad_total,
    kd_loss,
    loss_breakdown,
    mcd_loss,
    rld_loss,
    scd_loss,
)
from .nn import Checkpoint, Mlp, MlpSpec, load_checkpoint, save_checkpoint
from .refine import (
    ConfidencePair,
    MaskSet,
    MaskStrategy,
    compute_mask,
    masked_correlation,
    student_confidence,
    teacher_confidence,
)
from .train import TrainConfig, distill_student, evaluate, train_teacher

__version__ = "0.1.0"

__all__ = [
    "ProbVector",
    "softmax",
    "log_softmax",
    "kl_div",
    "cross_entropy",
    "MaskStrategy",
    "MaskSet",
    "ConfidencePair",
    "compute_mask",
    "teacher_confidence",
    "student_confidence",
    "masked_correlation",
    "Method",
    "DistillSpec",
    "LossBreakdown",
    "kd_loss",
    "scd_loss",
    "mcd_loss",
    "rld_loss",
    "dkd_loss",
    "correct_logits",
    "loss_breakdown",
    "grad_ce",
    "grad_kd",
    "grad_scd",
    "grad_mcd",
    "grad_total",
    "finite_diff_check",
    "MlpSpec",
    "Mlp",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "DatasetSpec",
    "Dataset",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "TrainConfig",
    "train_teacher",
    "distill_student",
    "evaluate",
]

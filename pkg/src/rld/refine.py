"""Refinement primitives: dynamic class masking and binary sample confidence.

The mask is always derived from raw (untempered) teacher logits together
with the true label. Under the default GE strategy every class whose
teacher logit is >= the true-class logit is masked, so the true class and
the teacher argmax are always masked. Under the strict G strategy only
classes ranked strictly above the true class are masked.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import ProbVector, as_logits, softmax
from .errors import InvalidLabel

__all__ = [
    "MaskStrategy",
    "MaskSet",
    "ConfidencePair",
    "compute_mask",
    "teacher_confidence",
    "student_confidence",
    "masked_correlation",
]


class MaskStrategy(str, Enum):
    GE = "GE"
    G = "G"


@dataclass(frozen=True)
class MaskSet:
    """Classes excluded from correlation alignment for one sample."""

    masked: frozenset[int]
    strategy: MaskStrategy
    true_class: int
    num_classes: int

    @property
    def complement(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.num_classes) if i not in self.masked)


@dataclass(frozen=True)
class ConfidencePair:
    """Binary distribution {head, rest} with head + rest = 1."""

    head: float
    rest: float


def _check_label(label: int, num_classes: int) -> int:
    label = int(label)
    if not 0 <= label < num_classes:
        raise InvalidLabel(f"label {label} out of range for C={num_classes}")
    return label


def compute_mask(teacher_logits, label: int, strategy: MaskStrategy = MaskStrategy.GE) -> MaskSet:
    """Mask of classes the teacher ranks at least as high as the true class.

    GE uses >= (true class always masked), G uses strict > (true class
    never masked). Raw logits only; the result is invariant under
    temperature and under shifting all logits by a constant.
    """
    z = as_logits(teacher_logits)
    label = _check_label(label, z.shape[0])
    strategy = MaskStrategy(strategy)
    if strategy is MaskStrategy.GE:
        masked = np.nonzero(z >= z[label])[0]
    else:
        masked = np.nonzero(z > z[label])[0]
    return MaskSet(frozenset(int(i) for i in masked), strategy, label, z.shape[0])


def teacher_confidence(teacher_logits, tau: float = 1.0) -> ConfidencePair:
    """Teacher-side confidence: max tempered probability vs everything else."""
    p = softmax(teacher_logits, tau)
    head = float(max(p.values))
    return ConfidencePair(head, 1.0 - head)


def student_confidence(student_logits, label: int, tau: float = 1.0) -> ConfidencePair:
    """Student-side confidence: tempered true-class probability vs the rest."""
    z = as_logits(student_logits)
    label = _check_label(label, z.shape[0])
    p = softmax(z, tau)
    head = float(p.values[label])
    return ConfidencePair(head, 1.0 - head)


def masked_correlation(logits, mask: MaskSet, tau: float = 1.0) -> ProbVector | None:
    """Tempered distribution over the mask complement.

    Returns None (the empty-correlation signal) when every class is
    masked. A single-class complement short-circuits to probability 1.0
    on that class without evaluating a softmax.
    """
    z = as_logits(logits)
    support = mask.complement
    if len(support) == 0:
        return None
    if len(support) == 1:
        return ProbVector((1.0,), support)
    return softmax(z, tau, support)

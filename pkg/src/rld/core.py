"""Numerically stable probability and divergence primitives.

Everything here works on per-sample 1-D logit vectors in float64. All
softmax-type quantities are computed in log space via max-subtraction so
that |z/tau| up to ~700 cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DivergenceInfinite,
    EmptySupport,
    InvalidLabel,
    InvalidLogit,
    ShapeError,
    SupportMismatch,
)

__all__ = [
    "ProbVector",
    "as_logits",
    "softmax",
    "log_softmax",
    "kl_div",
    "cross_entropy",
]


@dataclass(frozen=True)
class ProbVector:
    """A normalized distribution over an explicit, ordered class support.

    ``values[k]`` is the probability of class ``support[k]``. Masked-out
    classes are simply absent from the support; they are never stored as
    zeros.
    """

    values: tuple[float, ...]
    support: tuple[int, ...]

    def __post_init__(self):
        if len(self.values) != len(self.support):
            raise ShapeError("values and support lengths differ")
        if len(self.support) > 0:
            total = float(np.sum(np.asarray(self.values, dtype=np.float64)))
            if abs(total - 1.0) > 1e-9:
                raise ShapeError(f"probabilities sum to {total!r}, not 1")
            if any(b <= a for a, b in zip(self.support, self.support[1:])):
                raise ShapeError("support indices must be strictly increasing")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def as_logits(z) -> np.ndarray:
    """Validate and return a logit vector as a float64 array.

    Raises InvalidLogit for non-finite entries or fewer than two classes.
    """
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise InvalidLogit(f"expected a 1-D vector of >=2 logits, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidLogit("logits contain NaN or inf")
    return arr


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    return tau


def _resolve_support(support, num_classes: int) -> np.ndarray:
    if support is None:
        return np.arange(num_classes)
    idx = np.asarray(sorted(set(int(i) for i in support)), dtype=np.int64)
    if idx.size == 0:
        raise EmptySupport("softmax over an empty class subset")
    if idx[0] < 0 or idx[-1] >= num_classes:
        raise ShapeError(f"support indices out of range for C={num_classes}")
    return idx


def log_softmax(z, tau: float = 1.0, support=None) -> np.ndarray:
    """Log-probabilities of the tempered softmax, restricted to ``support``.

    Returned array is aligned with the (sorted) support; entry k is
    log p of class support[k].
    """
    arr = as_logits(z)
    tau = _check_tau(tau)
    idx = _resolve_support(support, arr.shape[0])
    scaled = arr[idx] / tau
    m = scaled.max()
    shifted = scaled - m
    lse = m + np.log(np.sum(np.exp(shifted)))
    return scaled - lse


def softmax(z, tau: float = 1.0, support=None) -> ProbVector:
    """Tempered softmax over ``support`` (the full class set if omitted)."""
    arr = as_logits(z)
    idx = _resolve_support(support, arr.shape[0])
    logp = log_softmax(arr, tau, idx)
    return ProbVector(tuple(np.exp(logp)), tuple(int(i) for i in idx))


def kl_div(p: ProbVector, q: ProbVector) -> float:
    """Forward KL divergence sum_c p_c ln(p_c/q_c) with 0*ln 0 := 0.

    Clamped to 0 from below; raises DivergenceInfinite when q is zero
    somewhere p is positive.
    """
    if p.support != q.support:
        raise SupportMismatch(f"supports differ: {p.support} vs {q.support}")
    pv = p.as_array()
    qv = q.as_array()
    mask = pv > 0.0
    if np.any(qv[mask] == 0.0):
        raise DivergenceInfinite("q assigns zero probability where p > 0")
    val = float(np.sum(pv[mask] * (np.log(pv[mask]) - np.log(qv[mask]))))
    return max(val, 0.0)


def cross_entropy(student_logits, label: int) -> float:
    """-log p(label) under the untempered student softmax."""
    arr = as_logits(student_logits)
    label = int(label)
    if not 0 <= label < arr.shape[0]:
        raise InvalidLabel(f"label {label} out of range for C={arr.shape[0]}")
    return float(-log_softmax(arr, 1.0)[label])

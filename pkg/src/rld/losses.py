"""Distillation objectives and their analytic per-sample gradients.

Seven training methods are supported:

  CE_ONLY  plain cross-entropy
  KD       classical tempered-KL logit matching
  DKD      decoupled target/non-target KL pair
  RLD      confidence + masked-correlation refinement
  LA       label-aware swap of the teacher's (argmax, true) logits
  RC       true-class logit augmented by the student's max logit
  LR       one-hot / soft-label mixture target

All losses are per-sample scalars; gradients are with respect to the raw
student logits. Tempered-KL losses carry the usual tau^2 factor, so their
logit gradients carry a single factor of tau.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import log

import numpy as np

from .core import ProbVector, as_logits, cross_entropy, kl_div, log_softmax, softmax
from .errors import ConfigError, DivergenceInfinite, InvalidLabel, ProbeFailure
from .refine import MaskStrategy, compute_mask, masked_correlation

__all__ = [
    "Method",
    "DistillSpec",
    "LossBreakdown",
    "FdReport",
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
    "grad_dkd",
    "grad_total",
    "finite_diff_check",
]


class Method(str, Enum):
    CE_ONLY = "CE_ONLY"
    KD = "KD"
    DKD = "DKD"
    RLD = "RLD"
    LA = "LA"
    RC = "RC"
    LR = "LR"


@dataclass(frozen=True)
class DistillSpec:
    """Loss selection plus every knob any of the methods needs."""

    method: Method = Method.RLD
    alpha: float = 1.0
    beta: float = 4.0
    tau: float = 4.0
    mask_strategy: MaskStrategy = MaskStrategy.GE
    kd_weight: float = 1.0
    lr_mix: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "mask_strategy", MaskStrategy(self.mask_strategy))
        if self.alpha < 0 or self.beta < 0 or self.kd_weight < 0:
            raise ConfigError("alpha, beta and kd_weight must be >= 0")
        if not 0.0 <= self.lr_mix <= 1.0:
            raise ConfigError(f"lr_mix must be in [0, 1], got {self.lr_mix}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-sample loss with its components.

    ``scd``/``mcd`` hold the confidence and masked-correlation components
    (for DKD these slots carry the target/non-target components, which are
    the same quantities evaluated with the true class in place of the
    teacher argmax). ``kd`` holds the tempered-KL term of KD/LA/RC/LR.
    """

    total: float
    ce: float = 0.0
    scd: float = 0.0
    mcd: float = 0.0
    kd: float = 0.0
    masked_all_flag: bool = False


def _binary_kl(v: float, s: float) -> float:
    """KL((v, 1-v) || (s, 1-s)) with the 0*ln 0 convention, clamped >= 0."""
    acc = 0.0
    for p, q in ((v, s), (1.0 - v, 1.0 - s)):
        if p > 0.0:
            if q == 0.0:
                raise DivergenceInfinite("confidence pair has zero mass where target > 0")
            acc += p * log(p / q)
    return max(acc, 0.0)


def kd_loss(teacher_logits, student_logits, tau: float = 1.0) -> float:
    """Classical distillation: tau^2 * KL over the full tempered softmaxes."""
    pt = softmax(teacher_logits, tau)
    ps = softmax(student_logits, tau)
    return tau * tau * kl_div(pt, ps)


def scd_loss(teacher_logits, student_logits, label: int, tau: float = 1.0) -> float:
    """Confidence alignment: teacher max probability vs student true-class."""
    v = float(max(softmax(teacher_logits, tau).values))
    zs = as_logits(student_logits)
    label = _check_label(label, zs.shape[0])
    s = float(np.exp(log_softmax(zs, tau)[label]))
    return tau * tau * _binary_kl(v, s)


def mcd_loss(
    teacher_logits,
    student_logits,
    label: int,
    tau: float = 1.0,
    strategy: MaskStrategy = MaskStrategy.GE,
) -> float:
    """Correlation alignment over the unmasked classes (0 if fewer than 2)."""
    value, _ = _mcd_with_flag(teacher_logits, student_logits, label, tau, strategy)
    return value


def _mcd_with_flag(teacher_logits, student_logits, label, tau, strategy) -> tuple[float, bool]:
    mask = compute_mask(teacher_logits, label, strategy)
    pt = masked_correlation(teacher_logits, mask, tau)
    if pt is None:
        return 0.0, True
    if len(pt.support) == 1:
        return 0.0, False
    ps = masked_correlation(student_logits, mask, tau)
    return tau * tau * kl_div(pt, ps), False


def rld_loss(teacher_logits, student_logits, label: int, spec: DistillSpec) -> LossBreakdown:
    """Combined loss: CE + alpha * SCD + beta * MCD."""
    if spec.method is not Method.RLD:
        raise ConfigError(f"rld_loss requires method RLD, got {spec.method}")
    ce = cross_entropy(student_logits, label)
    scd = scd_loss(teacher_logits, student_logits, label, spec.tau)
    mcd, flagged = _mcd_with_flag(
        teacher_logits, student_logits, label, spec.tau, spec.mask_strategy
    )
    total = ce
    if spec.alpha:
        total += spec.alpha * scd
    if spec.beta:
        total += spec.beta * mcd
    return LossBreakdown(total, ce=ce, scd=scd, mcd=mcd, masked_all_flag=flagged)


def dkd_loss(
    teacher_logits, student_logits, label: int, alpha: float, beta: float, tau: float
) -> LossBreakdown:
    """Decoupled pair: alpha * (true-vs-rest binary KL) + beta * (KL with the
    true class masked and both sides renormalized). No CE term."""
    zt = as_logits(teacher_logits)
    zs = as_logits(student_logits)
    label = _check_label(label, zt.shape[0])
    v = float(np.exp(log_softmax(zt, tau)[label]))
    s = float(np.exp(log_softmax(zs, tau)[label]))
    tckd = tau * tau * _binary_kl(v, s)
    support = tuple(i for i in range(zt.shape[0]) if i != label)
    if len(support) >= 2:
        nckd = tau * tau * kl_div(softmax(zt, tau, support), softmax(zs, tau, support))
    else:
        nckd = 0.0
    total = alpha * tckd + beta * nckd
    return LossBreakdown(total, scd=tckd, mcd=nckd)


def correct_logits(
    teacher_logits,
    student_logits,
    label: int,
    method: Method,
    lr_mix: float = 0.5,
    tau: float = 1.0,
):
    """Label-corrected distillation target for the LA/RC/LR baselines.

    LA swaps the teacher's argmax and true-class logits; RC adds the max of
    the current student logits to the teacher's true-class logit (the
    result is treated as a constant target, never differentiated through);
    LR returns the probability mixture lr_mix * onehot + (1 - lr_mix) *
    tempered teacher softmax. RC is read as correcting the teacher target;
    the one-line description it comes from would also admit augmenting the
    student side, which is not implemented.
    """
    zt = as_logits(teacher_logits)
    label = _check_label(label, zt.shape[0])
    method = Method(method)
    if method is Method.LA:
        out = zt.copy()
        amax = int(np.argmax(zt))
        out[amax], out[label] = zt[label], zt[amax]
        return out
    if method is Method.RC:
        zs = as_logits(student_logits)
        out = zt.copy()
        out[label] += float(np.max(zs))
        return out
    if method is Method.LR:
        soft = softmax(zt, tau)
        values = (1.0 - lr_mix) * soft.as_array()
        values[label] += lr_mix
        return ProbVector(tuple(values), soft.support)
    raise ConfigError(f"correct_logits is only defined for LA/RC/LR, got {method}")


def _target_kl(target: ProbVector, student_logits, tau: float) -> float:
    """tau^2 * KL(target || tempered student softmax); target may have zeros."""
    logq = log_softmax(student_logits, tau)
    t = target.as_array()
    nz = t > 0.0
    val = float(np.sum(t[nz] * (np.log(t[nz]) - logq[np.asarray(target.support)][nz])))
    return tau * tau * max(val, 0.0)


def loss_breakdown(teacher_logits, student_logits, label: int, spec: DistillSpec) -> LossBreakdown:
    """Total training loss for any method, with components recorded."""
    ce = cross_entropy(student_logits, label)
    m = spec.method
    if m is Method.CE_ONLY:
        return LossBreakdown(ce, ce=ce)
    if m is Method.RLD:
        return rld_loss(teacher_logits, student_logits, label, spec)
    if m is Method.DKD:
        d = dkd_loss(teacher_logits, student_logits, label, spec.alpha, spec.beta, spec.tau)
        return LossBreakdown(ce + d.total, ce=ce, scd=d.scd, mcd=d.mcd)
    if m is Method.KD:
        kd = kd_loss(teacher_logits, student_logits, spec.tau)
    elif m in (Method.LA, Method.RC):
        corrected = correct_logits(teacher_logits, student_logits, label, m, tau=spec.tau)
        kd = kd_loss(corrected, student_logits, spec.tau)
    else:  # LR
        target = correct_logits(
            teacher_logits, student_logits, label, m, lr_mix=spec.lr_mix, tau=spec.tau
        )
        kd = _target_kl(target, student_logits, spec.tau)
    return LossBreakdown(ce + spec.kd_weight * kd, ce=ce, kd=kd)


def _check_label(label: int, num_classes: int) -> int:
    label = int(label)
    if not 0 <= label < num_classes:
        raise InvalidLabel(f"label {label} out of range for C={num_classes}")
    return label


# ---------------------------------------------------------------------------
# analytic gradients (d loss / d student logits)
# ---------------------------------------------------------------------------


def grad_ce(student_logits, label: int) -> np.ndarray:
    """softmax(z) - onehot(label), the untempered cross-entropy gradient."""
    zs = as_logits(student_logits)
    label = _check_label(label, zs.shape[0])
    g = np.exp(log_softmax(zs, 1.0))
    g[label] -= 1.0
    return g


def grad_kd(teacher_logits, student_logits, tau: float = 1.0) -> np.ndarray:
    """tau * (tempered student softmax - tempered teacher softmax)."""
    pt = np.exp(log_softmax(teacher_logits, tau))
    ps = np.exp(log_softmax(student_logits, tau))
    return tau * (ps - pt)


def _grad_confidence(ps: np.ndarray, label: int, v: float, tau: float) -> np.ndarray:
    # d/dz of tau^2 * KL((v,1-v) || (s,1-s)) where s = tempered p[label]:
    # tau * (s - v) * (onehot - p) / (1 - s); the true-class entry reduces
    # to tau * (s - v) exactly, which also covers the s -> 1 limit.
    s = ps[label]
    denom = 1.0 - s
    scale = tau * (s - v) / denom if denom > 0.0 else 0.0
    g = scale * (-ps)
    g[label] = tau * (s - v)
    return g


def grad_scd(teacher_logits, student_logits, label: int, tau: float = 1.0) -> np.ndarray:
    """Two-branch confidence gradient: (s - v) on the true class, and
    p_i (s - v) / (s - 1) elsewhere, tempered and scaled by tau."""
    zs = as_logits(student_logits)
    label = _check_label(label, zs.shape[0])
    v = float(max(softmax(teacher_logits, tau).values))
    ps = np.exp(log_softmax(zs, tau))
    return _grad_confidence(ps, label, v, tau)


def grad_mcd(
    teacher_logits,
    student_logits,
    label: int,
    tau: float = 1.0,
    strategy: MaskStrategy = MaskStrategy.GE,
) -> np.ndarray:
    """tau * (masked student softmax - masked teacher softmax) on the mask
    complement, exactly zero on masked classes."""
    zs = as_logits(student_logits)
    mask = compute_mask(teacher_logits, label, strategy)
    g = np.zeros(zs.shape[0])
    support = mask.complement
    if len(support) < 2:
        return g
    idx = np.asarray(support)
    pt = np.exp(log_softmax(teacher_logits, tau, support))
    ps = np.exp(log_softmax(zs, tau, support))
    g[idx] = tau * (ps - pt)
    return g


def grad_dkd(
    teacher_logits, student_logits, label: int, alpha: float, beta: float, tau: float
) -> np.ndarray:
    zt = as_logits(teacher_logits)
    zs = as_logits(student_logits)
    label = _check_label(label, zt.shape[0])
    v = float(np.exp(log_softmax(zt, tau)[label]))
    ps = np.exp(log_softmax(zs, tau))
    g = alpha * _grad_confidence(ps, label, v, tau)
    support = tuple(i for i in range(zt.shape[0]) if i != label)
    if len(support) >= 2:
        idx = np.asarray(support)
        nt = np.exp(log_softmax(zt, tau, support))
        ns = np.exp(log_softmax(zs, tau, support))
        g[idx] += beta * tau * (ns - nt)
    return g


def grad_total(teacher_logits, student_logits, label: int, spec: DistillSpec) -> np.ndarray:
    """Gradient of loss_breakdown(...).total with respect to student logits.

    Correction targets (LA/RC/LR) are built from the current inputs and
    treated as constants, matching the loss definitions.
    """
    g = grad_ce(student_logits, label)
    m = spec.method
    if m is Method.CE_ONLY:
        return g
    if m is Method.RLD:
        g += spec.alpha * grad_scd(teacher_logits, student_logits, label, spec.tau)
        g += spec.beta * grad_mcd(
            teacher_logits, student_logits, label, spec.tau, spec.mask_strategy
        )
        return g
    if m is Method.DKD:
        return g + grad_dkd(teacher_logits, student_logits, label, spec.alpha, spec.beta, spec.tau)
    if m is Method.KD:
        return g + spec.kd_weight * grad_kd(teacher_logits, student_logits, spec.tau)
    if m in (Method.LA, Method.RC):
        corrected = correct_logits(teacher_logits, student_logits, label, m, tau=spec.tau)
        return g + spec.kd_weight * grad_kd(corrected, student_logits, spec.tau)
    target = correct_logits(
        teacher_logits, student_logits, label, m, lr_mix=spec.lr_mix, tau=spec.tau
    )
    ps = np.exp(log_softmax(student_logits, spec.tau))
    return g + spec.kd_weight * spec.tau * (ps - target.as_array())


# ---------------------------------------------------------------------------
# finite-difference verifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FdReport:
    max_abs_err: float
    max_rel_err: float
    passed: bool


def finite_diff_check(
    loss_fn, grad_fn, point, step: float = 1e-5, tolerance: float = 1e-4
) -> FdReport:
    """Compare grad_fn against central differences of loss_fn at point.

    Relative error per coordinate uses max(|analytic|, 1e-8) as the
    denominator. Raises ProbeFailure if the loss goes non-finite while
    probing.
    """
    if not step > 0:
        raise ValueError("step must be > 0")
    z = np.asarray(point, dtype=np.float64).copy()
    analytic = np.asarray(grad_fn(z), dtype=np.float64)
    fd = np.empty_like(z)
    for i in range(z.shape[0]):
        orig = z[i]
        z[i] = orig + step
        hi = float(loss_fn(z))
        z[i] = orig - step
        lo = float(loss_fn(z))
        z[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ProbeFailure(f"non-finite loss while probing coordinate {i}")
        fd[i] = (hi - lo) / (2.0 * step)
    abs_err = np.abs(fd - analytic)
    rel_err = abs_err / np.maximum(np.abs(analytic), 1e-8)
    max_rel = float(rel_err.max())
    return FdReport(float(abs_err.max()), max_rel, max_rel <= tolerance)

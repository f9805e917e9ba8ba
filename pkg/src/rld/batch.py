"""Vectorized batch evaluation of every training loss and its logit gradient.

This is the hot path of the training loop. Semantics are defined by the
per-sample functions in losses.py; tests pin the two implementations
against each other. Row ordering is fixed, so results are deterministic
and independent of batch partitioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .losses import DistillSpec, Method
from .refine import MaskStrategy

__all__ = ["BatchStats", "batch_loss_and_grad"]


@dataclass(frozen=True)
class BatchStats:
    """Arithmetic means over the batch, plus the empty-complement count."""

    total: float
    ce: float
    scd: float
    mcd: float
    kd: float
    masked_all: int


def _row_softmax(z: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    scaled = z / tau
    m = scaled.max(axis=1, keepdims=True)
    shifted = scaled - m
    lse = m + np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = scaled - lse
    return np.exp(logp), logp


def _masked_row_softmax(z: np.ndarray, keep: np.ndarray, tau: float):
    """Row softmax restricted to keep==True columns; rows must keep >= 1."""
    scaled = np.where(keep, z / tau, -np.inf)
    m = scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled - m)
    e[~keep] = 0.0
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    logp = np.where(keep, scaled - (m + np.log(s)), 0.0)
    return p, logp


def _confidence_rows(ps: np.ndarray, s: np.ndarray, v: np.ndarray, labels, tau: float):
    """Loss rows and gradient of tau^2 * KL((v,1-v) || (s,1-s)) in z^S.

    A fully underflowed student probability yields an honest inf loss;
    the gradient stays finite.
    """
    with np.errstate(divide="ignore"):
        loss = tau * tau * (v * np.log(v / s) + (1.0 - v) * np.log((1.0 - v) / (1.0 - s)))
    np.maximum(loss, 0.0, out=loss)
    denom = 1.0 - s
    scale = np.where(denom > 0.0, tau * (s - v) / np.where(denom > 0.0, denom, 1.0), 0.0)
    g = scale[:, None] * (-ps)
    g[np.arange(ps.shape[0]), labels] = tau * (s - v)
    return loss, g


def _masked_kl_rows(zt, zs, keep, tau: float):
    """Loss rows and gradient of tau^2 * KL over keep-columns, renormalized.

    Rows with fewer than two kept classes contribute exactly zero.
    """
    n, c = zt.shape
    loss = np.zeros(n)
    g = np.zeros((n, c))
    active = keep.sum(axis=1) >= 2
    if not np.any(active):
        return loss, g
    ka = keep[active]
    pt, logpt = _masked_row_softmax(zt[active], ka, tau)
    ps, logps = _masked_row_softmax(zs[active], ka, tau)
    rows = tau * tau * np.where(ka, pt * (logpt - logps), 0.0).sum(axis=1)
    loss[active] = np.maximum(rows, 0.0)
    g[active] = np.where(ka, tau * (ps - pt), 0.0)
    return loss, g


def batch_loss_and_grad(
    teacher_logits: np.ndarray | None,
    student_logits: np.ndarray,
    labels: np.ndarray,
    spec: DistillSpec,
) -> tuple[BatchStats, np.ndarray]:
    """Mean loss components and the per-sample gradient matrix (B, C)."""
    zs = np.asarray(student_logits, dtype=np.float64)
    y = np.asarray(labels)
    if zs.ndim != 2 or y.shape != (zs.shape[0],):
        raise ShapeError("student logits must be (B, C) with (B,) labels")
    n = zs.shape[0]
    rows = np.arange(n)
    tau = spec.tau

    ps1, logps1 = _row_softmax(zs, 1.0)
    ce_rows = -logps1[rows, y]
    g = ps1.copy()
    g[rows, y] -= 1.0

    method = spec.method
    if method is Method.CE_ONLY:
        m = float(ce_rows.mean())
        return BatchStats(m, m, 0.0, 0.0, 0.0, 0), g

    zt = np.asarray(teacher_logits, dtype=np.float64)
    if zt.shape != zs.shape:
        raise ShapeError(f"teacher logits {zt.shape} do not match student {zs.shape}")

    scd_rows = np.zeros(n)
    mcd_rows = np.zeros(n)
    kd_rows = np.zeros(n)
    masked_all = 0

    if method in (Method.RLD, Method.DKD):
        pt, _ = _row_softmax(zt, tau)
        ps, _ = _row_softmax(zs, tau)
        s = ps[rows, y]
        v = pt.max(axis=1) if method is Method.RLD else pt[rows, y]
        scd_rows, g_conf = _confidence_rows(ps, s, v, y, tau)
        if method is Method.RLD:
            thresh = zt[rows, y][:, None]
            masked = zt >= thresh if spec.mask_strategy is MaskStrategy.GE else zt > thresh
            keep = ~masked
            masked_all = int((keep.sum(axis=1) == 0).sum())
        else:
            keep = np.ones_like(zs, dtype=bool)
            keep[rows, y] = False
        mcd_rows, g_mask = _masked_kl_rows(zt, zs, keep, tau)
        # zero-weight components stay inert even when their row is inf
        total_rows = ce_rows.copy()
        if spec.alpha:
            g += spec.alpha * g_conf
            total_rows += spec.alpha * scd_rows
        if spec.beta:
            g += spec.beta * g_mask
            total_rows += spec.beta * mcd_rows
    else:
        if method is Method.LA:
            target = zt.copy()
            amax = zt.argmax(axis=1)
            target[rows, amax] = zt[rows, y]
            target[rows, y] = zt[rows, amax]
            pt, logpt = _row_softmax(target, tau)
        elif method is Method.RC:
            target = zt.copy()
            target[rows, y] += zs.max(axis=1)
            pt, logpt = _row_softmax(target, tau)
        elif method is Method.LR:
            soft, _ = _row_softmax(zt, tau)
            pt = (1.0 - spec.lr_mix) * soft
            pt[rows, y] += spec.lr_mix
            logpt = None
        else:  # KD
            pt, logpt = _row_softmax(zt, tau)
        ps, logps = _row_softmax(zs, tau)
        if logpt is None:
            nz = pt > 0.0
            terms = np.zeros_like(pt)
            terms[nz] = pt[nz] * (np.log(pt[nz]) - logps[nz])
            kd_rows = tau * tau * terms.sum(axis=1)
        else:
            kd_rows = tau * tau * (pt * (logpt - logps)).sum(axis=1)
        np.maximum(kd_rows, 0.0, out=kd_rows)
        g += spec.kd_weight * tau * (ps - pt)
        total_rows = ce_rows + spec.kd_weight * kd_rows

    stats = BatchStats(
        float(total_rows.mean()),
        float(ce_rows.mean()),
        float(scd_rows.mean()),
        float(mcd_rows.mean()),
        float(kd_rows.mean()),
        masked_all,
    )
    return stats, g

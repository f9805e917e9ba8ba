"""Randomized finite-difference verification of every analytic gradient.

Logit-level checks probe d loss / d student-logits for all nine loss
variants on randomized instances (including teacher-wrong, tied-logit and
near-one-hot cases). End-to-end checks backpropagate each loss through a
small network and probe d loss / d parameters. The RC target depends on
the current student output and is defined as a constant, so its probes
freeze the corrected target at the base point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .losses import (
    DistillSpec,
    Method,
    cross_entropy,
    correct_logits,
    dkd_loss,
    finite_diff_check,
    grad_ce,
    grad_dkd,
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
from .nn import Mlp, MlpSpec
from .refine import MaskStrategy

__all__ = ["METHOD_NAMES", "MethodReport", "check_logit_gradients", "check_end_to_end", "run_all_checks"]

METHOD_NAMES = ["CE", "KD", "SCD", "MCD", "DKD-total", "RLD-total", "LA", "RC", "LR"]

_E2E_WIDTHS = (4, 5, 3)
_E2E_BATCH = 4


@dataclass
class MethodReport:
    name: str
    instances: int
    max_abs_err: float
    max_rel_err: float
    passed: bool


def _sample_instance(rng: np.random.Generator, case: int):
    c = int(rng.integers(3, 21))
    tau = float(rng.choice([1.0, 2.0, 4.0]))
    y = int(rng.integers(c))
    zt = rng.normal(0.0, 2.0, size=c)
    zs = rng.normal(0.0, 2.0, size=c)
    if case == 1:  # teacher wrong: argmax forced off the label
        other = (y + 1 + int(rng.integers(c - 1))) % c
        zt[other] = zt.max() + 1.0 + rng.random()
    elif case == 2:  # ties at the true-class logit
        k = int(rng.integers(1, min(3, c)))
        tied = rng.choice([i for i in range(c) if i != y], size=k, replace=False)
        zt[tied] = zt[y]
    elif case == 3:
        # near one-hot on both sides; the bump stays moderate so the
        # smallest probabilities remain resolvable by central differences
        # at h=1e-5 against the 1e-8 relative-error floor
        zt = rng.normal(0.0, 1.0, size=c)
        zs = rng.normal(0.0, 1.0, size=c)
        zt[int(rng.integers(c))] += 5.5
        zs[int(rng.integers(c))] += 5.5
    return zt, zs, y, tau


def _probe(name: str, zt: np.ndarray, zs0: np.ndarray, y: int, tau: float):
    """(loss_fn, grad_fn) over student logits for one named loss."""
    if name == "CE":
        return (lambda z: cross_entropy(z, y)), (lambda z: grad_ce(z, y))
    if name == "KD":
        return (lambda z: kd_loss(zt, z, tau)), (lambda z: grad_kd(zt, z, tau))
    if name == "SCD":
        return (lambda z: scd_loss(zt, z, y, tau)), (lambda z: grad_scd(zt, z, y, tau))
    if name == "MCD":
        return (
            lambda z: mcd_loss(zt, z, y, tau, MaskStrategy.GE),
            lambda z: grad_mcd(zt, z, y, tau, MaskStrategy.GE),
        )
    if name == "DKD-total":
        spec = DistillSpec(method=Method.DKD, alpha=1.0, beta=2.0, tau=tau)
        return (
            lambda z: loss_breakdown(zt, z, y, spec).total,
            lambda z: grad_total(zt, z, y, spec),
        )
    if name == "RLD-total":
        spec = DistillSpec(method=Method.RLD, alpha=1.0, beta=2.0, tau=tau)
        return (
            lambda z: loss_breakdown(zt, z, y, spec).total,
            lambda z: grad_total(zt, z, y, spec),
        )
    if name in ("LA", "LR"):
        spec = DistillSpec(method=Method(name), tau=tau)
        return (
            lambda z: loss_breakdown(zt, z, y, spec).total,
            lambda z: grad_total(zt, z, y, spec),
        )
    if name == "RC":
        # the corrected target is a constant: freeze it at the base point
        frozen = correct_logits(zt, zs0, y, Method.RC)
        return (
            lambda z: cross_entropy(z, y) + kd_loss(frozen, z, tau),
            lambda z: grad_ce(z, y) + grad_kd(frozen, z, tau),
        )
    raise ValueError(f"unknown method name {name!r}")


def check_logit_gradients(
    name: str,
    instances: int = 50,
    seed: int = 2024,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    fault: float = 0.0,
) -> MethodReport:
    rng = np.random.default_rng(seed)
    max_abs = 0.0
    max_rel = 0.0
    for i in range(instances):
        zt, zs, y, tau = _sample_instance(rng, i % 4)
        loss_fn, grad_fn = _probe(name, zt, zs, y, tau)
        if fault:
            inner = grad_fn

            def grad_fn(z, _inner=inner):
                g = np.asarray(_inner(z), dtype=np.float64).copy()
                g[0] += fault
                return g

        report = finite_diff_check(loss_fn, grad_fn, zs, step, tolerance)
        max_abs = max(max_abs, report.max_abs_err)
        max_rel = max(max_rel, report.max_rel_err)
    return MethodReport(name, instances, max_abs, max_rel, max_rel <= tolerance)


def _per_sample_fns(name: str, spec: DistillSpec, zt_rows: np.ndarray, zs0_rows: np.ndarray):
    """Per-sample (loss, grad) callables for the end-to-end check."""
    if name == "CE":
        return (lambda i, z, y: cross_entropy(z, y)), (lambda i, z, y: grad_ce(z, y))
    if name == "KD":
        return (
            lambda i, z, y: kd_loss(zt_rows[i], z, spec.tau),
            lambda i, z, y: grad_kd(zt_rows[i], z, spec.tau),
        )
    if name == "SCD":
        return (
            lambda i, z, y: scd_loss(zt_rows[i], z, y, spec.tau),
            lambda i, z, y: grad_scd(zt_rows[i], z, y, spec.tau),
        )
    if name == "MCD":
        return (
            lambda i, z, y: mcd_loss(zt_rows[i], z, y, spec.tau, spec.mask_strategy),
            lambda i, z, y: grad_mcd(zt_rows[i], z, y, spec.tau, spec.mask_strategy),
        )
    if name == "DKD-total":
        dspec = replace(spec, method=Method.DKD)
        return (
            lambda i, z, y: loss_breakdown(zt_rows[i], z, y, dspec).total,
            lambda i, z, y: grad_total(zt_rows[i], z, y, dspec),
        )
    if name == "RLD-total":
        dspec = replace(spec, method=Method.RLD)
        return (
            lambda i, z, y: loss_breakdown(zt_rows[i], z, y, dspec).total,
            lambda i, z, y: grad_total(zt_rows[i], z, y, dspec),
        )
    if name in ("LA", "LR"):
        dspec = replace(spec, method=Method(name))
        return (
            lambda i, z, y: loss_breakdown(zt_rows[i], z, y, dspec).total,
            lambda i, z, y: grad_total(zt_rows[i], z, y, dspec),
        )
    if name == "RC":
        frozen = [
            correct_logits(zt_rows[i], zs0_rows[i], int(y), Method.RC)
            for i, y in enumerate(_e2e_labels(zt_rows.shape[0]))
        ]
        return (
            lambda i, z, y: cross_entropy(z, y) + kd_loss(frozen[i], z, spec.tau),
            lambda i, z, y: grad_ce(z, y) + grad_kd(frozen[i], z, spec.tau),
        )
    raise ValueError(f"unknown method name {name!r}")


def _e2e_labels(batch: int) -> np.ndarray:
    return np.arange(batch) % _E2E_WIDTHS[-1]


def _flatten_params(model: Mlp) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in zip(model.weights, model.biases) for a in pair])


def _model_from_flat(flat: np.ndarray, spec: MlpSpec) -> Mlp:
    model = Mlp.init(spec)
    off = 0
    for layer in range(len(model.weights)):
        w = model.weights[layer]
        model.weights[layer] = flat[off : off + w.size].reshape(w.shape).copy()
        off += w.size
        b = model.biases[layer]
        model.biases[layer] = flat[off : off + b.size].copy()
        off += b.size
    return model


def _e2e_setup(seed: int):
    """Fixed small instance with pre-activations kept away from ReLU kinks."""
    spec = MlpSpec(_E2E_WIDTHS, init_seed=seed)
    rng = np.random.default_rng(seed)
    y = _e2e_labels(_E2E_BATCH)
    for _ in range(100):
        x = rng.normal(0.0, 1.0, size=(_E2E_BATCH, _E2E_WIDTHS[0]))
        zt = rng.normal(0.0, 2.0, size=(_E2E_BATCH, _E2E_WIDTHS[-1]))
        model = Mlp.init(replace(spec, init_seed=int(rng.integers(2**32))))
        pre = x @ model.weights[0] + model.biases[0]
        if np.abs(pre).min() > 1e-3:
            return model, x, zt, y
    raise RuntimeError("could not find a kink-free end-to-end instance")


def check_end_to_end(
    name: str,
    seed: int = 7,
    tau: float = 2.0,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> MethodReport:
    """Finite differences through the whole network for one loss."""
    model, x, zt_rows, y = _e2e_setup(seed)
    spec = DistillSpec(method=Method.RLD, alpha=1.0, beta=2.0, tau=tau)
    zs0 = model.forward(x)[0]
    loss_i, grad_i = _per_sample_fns(name, spec, zt_rows, zs0)
    mspec = model.spec
    n = x.shape[0]

    def loss_fn(flat: np.ndarray) -> float:
        m = _model_from_flat(flat, mspec)
        logits = m.forward(x)[0]
        return sum(loss_i(i, logits[i], int(y[i])) for i in range(n)) / n

    def grad_fn(flat: np.ndarray) -> np.ndarray:
        m = _model_from_flat(flat, mspec)
        logits, cache = m.forward(x)
        g = np.stack([grad_i(i, logits[i], int(y[i])) for i in range(n)]) / n
        grads = m.backward(cache, g)
        return np.concatenate([a.ravel() for pair in grads for a in pair])

    report = finite_diff_check(loss_fn, grad_fn, _flatten_params(model), step, tolerance)
    return MethodReport(name, 1, report.max_abs_err, report.max_rel_err, report.passed)


def run_all_checks(
    instances: int = 50,
    seed: int = 2024,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    fault: float = 0.0,
    end_to_end: bool = True,
) -> list[MethodReport]:
    """One report row per loss name; end-to-end errors folded into each row."""
    reports = []
    for name in METHOD_NAMES:
        rep = check_logit_gradients(name, instances, seed, step, tolerance, fault)
        if end_to_end and not fault:
            e2e = check_end_to_end(name, step=step, tolerance=tolerance)
            rep = MethodReport(
                name,
                rep.instances + 1,
                max(rep.max_abs_err, e2e.max_abs_err),
                max(rep.max_rel_err, e2e.max_rel_err),
                rep.passed and e2e.passed,
            )
        reports.append(rep)
    return reports

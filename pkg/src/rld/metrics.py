"""Experiment runners and analysis artifacts, all emitted as CSV.

Seed discipline for multi-trial runs: trial seed s re-keys both the
student initialization and the epoch shuffles (init_seed = s,
shuffle_seed = s; the underlying PCG32 streams stay disjoint by purpose
tag). Cells of a grid or ablation are independent and may run on worker
threads; the result table is assembled in cell order, so output is
deterministic regardless of completion order.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product

from .data import Dataset
from .errors import ConfigError, IoError, ShapeError
from .losses import DistillSpec, Method
from .nn import Checkpoint, MlpSpec
from .refine import MaskStrategy
from .train import TrainConfig, distill_student, evaluate

import numpy as np

__all__ = [
    "RunRecord",
    "ClassDiscrepancy",
    "Proportions",
    "logit_mae_per_class",
    "prediction_proportions",
    "ablation_specs",
    "run_ablation",
    "run_grid",
    "emit_csv",
    "run_records_rows",
    "RUN_RECORD_FIELDS",
]


@dataclass(frozen=True)
class RunRecord:
    label: str
    method: str
    alpha: float
    beta: float
    tau: float
    mask_strategy: str
    kd_weight: float
    lr_mix: float
    seed: int | None  # None marks a per-cell mean row
    top1: float
    top1_curve: tuple[float, ...]
    masked_all_total: int | None
    wall_time: float


@dataclass(frozen=True)
class ClassDiscrepancy:
    values: tuple[float, ...]


@dataclass(frozen=True)
class Proportions:
    correct: float
    incorrect: float


def logit_mae_per_class(teacher_logits, student_logits, labels=None) -> ClassDiscrepancy:
    """Per-class mean absolute logit error over a split, shape (C,)."""
    zt = np.asarray(teacher_logits, dtype=np.float64)
    zs = np.asarray(student_logits, dtype=np.float64)
    if zt.shape != zs.shape or zt.ndim != 2:
        raise ShapeError(f"logit sets must share an (N, C) shape, got {zt.shape} vs {zs.shape}")
    if labels is not None and len(labels) != zt.shape[0]:
        raise ShapeError("label count does not match logit rows")
    mae = np.abs(zt - zs).mean(axis=0)
    return ClassDiscrepancy(tuple(float(v) for v in mae))


def prediction_proportions(model: Checkpoint, x, y) -> Proportions:
    """Fractions of argmax-correct and -incorrect predictions on a split."""
    top1 = evaluate(model, x, y).top1
    return Proportions(top1, 1.0 - top1)


def _seeded_trial(
    ds: Dataset,
    teacher: Checkpoint,
    student_spec: MlpSpec,
    cfg: TrainConfig,
    dspec: DistillSpec,
    label: str,
    seed: int,
) -> RunRecord:
    start = time.perf_counter()
    spec_s = replace(student_spec, init_seed=seed)
    cfg_s = replace(cfg, shuffle_seed=seed)
    _, logs = distill_student(ds, teacher, spec_s, cfg_s, dspec)
    elapsed = time.perf_counter() - start
    return RunRecord(
        label=label,
        method=dspec.method.value,
        alpha=dspec.alpha,
        beta=dspec.beta,
        tau=dspec.tau,
        mask_strategy=dspec.mask_strategy.value,
        kd_weight=dspec.kd_weight,
        lr_mix=dspec.lr_mix,
        seed=seed,
        top1=logs[-1].val_top1 if logs else 0.0,
        top1_curve=tuple(l.val_top1 for l in logs),
        masked_all_total=sum(l.masked_all for l in logs),
        wall_time=elapsed,
    )


def _run_cells(cells, threads: int) -> list[RunRecord]:
    if threads <= 1:
        return [fn() for fn in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn) for fn in cells]
        return [f.result() for f in futures]


def _mean_record(label: str, group: list[RunRecord]) -> RunRecord:
    first = group[0]
    return RunRecord(
        label=label,
        method=first.method,
        alpha=first.alpha,
        beta=first.beta,
        tau=first.tau,
        mask_strategy=first.mask_strategy,
        kd_weight=first.kd_weight,
        lr_mix=first.lr_mix,
        seed=None,
        top1=float(np.mean([r.top1 for r in group])),
        top1_curve=(),
        masked_all_total=None,
        wall_time=sum(r.wall_time for r in group),
    )


def ablation_specs(base: DistillSpec) -> list[tuple[str, DistillSpec]]:
    """The six component configurations, in table order: plain CE, CE+SCD,
    CE+MCD under each mask strategy, and the full loss under each."""
    a, b = base.alpha, base.beta
    return [
        ("ce", replace(base, method=Method.CE_ONLY)),
        ("ce+scd", replace(base, method=Method.RLD, alpha=a, beta=0.0)),
        (
            "ce+mcd_g",
            replace(base, method=Method.RLD, alpha=0.0, beta=b, mask_strategy=MaskStrategy.G),
        ),
        (
            "ce+mcd_ge",
            replace(base, method=Method.RLD, alpha=0.0, beta=b, mask_strategy=MaskStrategy.GE),
        ),
        (
            "ce+scd+mcd_g",
            replace(base, method=Method.RLD, alpha=a, beta=b, mask_strategy=MaskStrategy.G),
        ),
        (
            "ce+scd+mcd_ge",
            replace(base, method=Method.RLD, alpha=a, beta=b, mask_strategy=MaskStrategy.GE),
        ),
    ]


def run_ablation(
    ds: Dataset,
    teacher: Checkpoint,
    student_spec: MlpSpec,
    cfg: TrainConfig,
    base_spec: DistillSpec,
    seeds=(0, 1, 2),
    threads: int = 1,
) -> list[RunRecord]:
    """All six component rows over the given seeds, plus one mean row each."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    configs = ablation_specs(base_spec)
    cells = [
        (lambda l=label, d=dspec, s=seed: _seeded_trial(ds, teacher, student_spec, cfg, d, l, s))
        for label, dspec in configs
        for seed in seeds
    ]
    records = _run_cells(cells, threads)
    means = []
    for i, (label, _) in enumerate(configs):
        group = records[i * len(seeds) : (i + 1) * len(seeds)]
        means.append(_mean_record(label, group))
    return records + means


def run_grid(
    ds: Dataset,
    teacher: Checkpoint,
    student_spec: MlpSpec,
    cfg: TrainConfig,
    alphas,
    betas,
    taus,
    seeds=(0, 1, 2),
    base_spec: DistillSpec | None = None,
    threads: int = 1,
) -> list[RunRecord]:
    """Cartesian hyper-parameter sweep with per-cell mean rows appended."""
    alphas, betas, taus, seeds = list(alphas), list(betas), list(taus), list(seeds)
    if not (alphas and betas and taus and seeds):
        raise ConfigError("grid lists must be non-empty")
    base = base_spec or DistillSpec(method=Method.RLD)
    cellspecs = [
        (f"a{a:g}_b{b:g}_t{t:g}", replace(base, method=Method.RLD, alpha=a, beta=b, tau=t))
        for a, b, t in product(alphas, betas, taus)
    ]
    cells = [
        (lambda l=label, d=dspec, s=seed: _seeded_trial(ds, teacher, student_spec, cfg, d, l, s))
        for label, dspec in cellspecs
        for seed in seeds
    ]
    records = _run_cells(cells, threads)
    means = []
    for i, (label, _) in enumerate(cellspecs):
        group = records[i * len(seeds) : (i + 1) * len(seeds)]
        means.append(_mean_record(label, group))
    return records + means


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

RUN_RECORD_FIELDS = [
    "label",
    "method",
    "alpha",
    "beta",
    "tau",
    "mask_strategy",
    "kd_weight",
    "lr_mix",
    "seed",
    "top1",
    "masked_all_total",
    "top1_curve",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def run_records_rows(records: list[RunRecord]) -> list[dict]:
    """Run records as CSV-ready dicts. Wall times are intentionally
    excluded so emissions stay byte-deterministic; report them separately."""
    rows = []
    for r in records:
        rows.append(
            {
                "label": r.label,
                "method": r.method,
                "alpha": r.alpha,
                "beta": r.beta,
                "tau": r.tau,
                "mask_strategy": r.mask_strategy,
                "kd_weight": r.kd_weight,
                "lr_mix": r.lr_mix,
                "seed": "mean" if r.seed is None else r.seed,
                "top1": r.top1,
                "masked_all_total": r.masked_all_total,
                "top1_curve": ";".join(format(v, ".17g") for v in r.top1_curve),
            }
        )
    return rows


def emit_csv(path, rows: list[dict], fieldnames: list[str]) -> None:
    """RFC-4180-style CSV: header row, CRLF endings, 17-significant-digit
    floats, rows written in the order given."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(fieldnames)
            for row in rows:
                writer.writerow([_fmt(row.get(name)) for name in fieldnames])
    except OSError as exc:
        raise IoError(f"cannot write CSV {path}: {exc}") from exc

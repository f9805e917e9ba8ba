"""Command-line interface: reproducible runs driven by a flat config file.

Commands: gen-data, train-teacher, distill, eval, check-grads, ablate,
grid. The config format is plain ``key = value`` UTF-8 text with ``#``
comments; unknown keys are a hard error. Every run writes the fully
resolved config (defaults included) next to its outputs, plus a separate
wall-time file, so reruns from the echoed config are byte-identical.

Exit codes: 0 success, 2 config error, 3 data/file error,
4 teacher/dataset incompatibility, 5 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from pathlib import Path

from .data import DatasetSpec, generate_dataset, load_dataset, nearest_mean_accuracy, save_dataset
from .errors import ConfigError, DistillError, IncompatibleTeacher, IoError, ProbeFailure
from .gradcheck import run_all_checks
from .losses import DistillSpec, Method
from .metrics import (
    RUN_RECORD_FIELDS,
    emit_csv,
    prediction_proportions,
    run_ablation,
    run_grid,
    run_records_rows,
)
from .nn import MlpSpec, load_checkpoint, save_checkpoint
from .refine import MaskStrategy
from .train import TrainConfig, distill_student, evaluate, train_teacher

# key -> (parser, default); None default means the key is required by the
# commands that use it
_INT = int
_FLOAT = float
_STR = str


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip() != "")


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip() != "")


CONFIG_SCHEMA: dict[str, tuple] = {
    "data.num_classes": (_INT, None),
    "data.dim": (_INT, None),
    "data.train_per_class": (_INT, None),
    "data.val_per_class": (_INT, None),
    "data.class_sep": (_FLOAT, None),
    "data.noise_sigma": (_FLOAT, None),
    "data.seed": (_INT, None),
    "teacher.widths": (_int_list, None),
    "teacher.init_seed": (_INT, 1),
    "student.widths": (_int_list, None),
    "student.init_seed": (_INT, 2),
    "train.batch_size": (_INT, 64),
    "train.epochs": (_INT, 60),
    "train.lr": (_FLOAT, 0.05),
    "train.lr_decay_epochs": (_int_list, (38, 45, 53)),
    "train.lr_decay_factor": (_FLOAT, 0.1),
    "train.momentum": (_FLOAT, 0.9),
    "train.weight_decay": (_FLOAT, 5e-4),
    "train.shuffle_seed": (_INT, 0),
    "distill.method": (_STR, "RLD"),
    "distill.alpha": (_FLOAT, 1.0),
    "distill.beta": (_FLOAT, 4.0),
    "distill.tau": (_FLOAT, 4.0),
    "distill.mask_strategy": (_STR, "GE"),
    "distill.kd_weight": (_FLOAT, 1.0),
    "distill.lr_mix": (_FLOAT, 0.5),
    "grid.alphas": (_float_list, (1.0,)),
    "grid.betas": (_float_list, (2.0, 4.0, 8.0, 16.0)),
    "grid.taus": (_float_list, (2.0, 3.0, 4.0, 5.0)),
    "check.instances": (_INT, 50),
    "check.seed": (_INT, 2024),
    "check.step": (_FLOAT, 1e-5),
    "check.tolerance": (_FLOAT, 1e-4),
    "seeds": (_int_list, (0, 1, 2)),
    "out_dir": (_STR, "runs"),
    "paths.dataset": (_STR, "dataset.rldd"),
    "paths.teacher": (_STR, "teacher.rldc"),
    "eval.checkpoint": (_STR, ""),
}

_REQUIRED = {
    "gen-data": [k for k in CONFIG_SCHEMA if k.startswith("data.")],
    "train-teacher": ["teacher.widths"],
    "distill": ["student.widths"],
    "eval": [],
    "check-grads": [],
    "ablate": ["student.widths"],
    "grid": ["student.widths"],
}

# the decoupled baseline customarily runs with a heavier non-target weight
_DKD_DEFAULT_BETA = 8.0


class RunConfig:
    def __init__(self, values: dict, provided: set[str]):
        self.values = values
        self.provided = provided

    def __getitem__(self, key: str):
        return self.values[key]

    def require(self, command: str) -> None:
        for key in _REQUIRED[command]:
            if self.values[key] is None:
                raise ConfigError(f"missing required config key: {key}")

    def resolved_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if value is None:
                continue
            if isinstance(value, tuple):
                rendered = ",".join(format(v, ".17g") if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                rendered = format(value, ".17g")
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode("utf-8")).hexdigest()[:12]


def parse_config(text: str) -> RunConfig:
    values = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    provided: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key: {key}")
        parser = CONFIG_SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r} ({exc})") from exc
        provided.add(key)
    if values["distill.method"] == "DKD" and "distill.beta" not in provided:
        values["distill.beta"] = _DKD_DEFAULT_BETA
    return RunConfig(values, provided)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config("")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _dataset_spec(cfg: RunConfig) -> DatasetSpec:
    return DatasetSpec(
        num_classes=cfg["data.num_classes"],
        dim=cfg["data.dim"],
        train_per_class=cfg["data.train_per_class"],
        val_per_class=cfg["data.val_per_class"],
        class_sep=cfg["data.class_sep"],
        noise_sigma=cfg["data.noise_sigma"],
        seed=cfg["data.seed"],
    )


def _train_config(cfg: RunConfig, shuffle_seed: int | None = None) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"],
        lr=cfg["train.lr"],
        lr_decay_epochs=cfg["train.lr_decay_epochs"],
        lr_decay_factor=cfg["train.lr_decay_factor"],
        momentum=cfg["train.momentum"],
        weight_decay=cfg["train.weight_decay"],
        shuffle_seed=cfg["train.shuffle_seed"] if shuffle_seed is None else shuffle_seed,
    )


def _distill_spec(cfg: RunConfig) -> DistillSpec:
    try:
        method = Method(cfg["distill.method"])
        strategy = MaskStrategy(cfg["distill.mask_strategy"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return DistillSpec(
        method=method,
        alpha=cfg["distill.alpha"],
        beta=cfg["distill.beta"],
        tau=cfg["distill.tau"],
        mask_strategy=strategy,
        kd_weight=cfg["distill.kd_weight"],
        lr_mix=cfg["distill.lr_mix"],
    )


class _Run:
    """Shared output-directory plumbing for one command invocation."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.hash = cfg.hash()
        self.out_dir = Path(cfg["out_dir"])
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.started = time.perf_counter()

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def artifact(self, suffix: str) -> Path:
        return self.out_dir / f"{self.command}-{self.hash}{suffix}"

    def finish(self) -> None:
        config_path = self.artifact(".config.txt")
        config_path.write_text(self.cfg.resolved_text(), encoding="utf-8")
        elapsed = time.perf_counter() - self.started
        self.artifact(".walltime.txt").write_text(f"wall_time_seconds={elapsed:.3f}\n", "utf-8")


def cmd_gen_data(cfg: RunConfig) -> int:
    cfg.require("gen-data")
    run = _Run("gen-data", cfg)
    ds = generate_dataset(_dataset_spec(cfg))
    out = run.path(cfg["paths.dataset"])
    save_dataset(out, ds)
    baseline = nearest_mean_accuracy(ds)
    print(f"dataset written: {out}")
    print(
        f"classes={ds.num_classes} dim={ds.dim} "
        f"train={ds.x_train.shape[0]} val={ds.x_val.shape[0]}"
    )
    print(f"nearest-mean baseline: {baseline:.4f}")
    run.finish()
    return 0


def cmd_train_teacher(cfg: RunConfig) -> int:
    cfg.require("train-teacher")
    run = _Run("train-teacher", cfg)
    ds = load_dataset(run.path(cfg["paths.dataset"]))
    spec = MlpSpec(cfg["teacher.widths"], init_seed=cfg["teacher.init_seed"])
    ckpt = train_teacher(ds, spec, _train_config(cfg))
    out = run.path(cfg["paths.teacher"])
    ckpt.metadata["config_hash"] = run.hash
    save_checkpoint(out, ckpt)
    props = prediction_proportions(ckpt, ds.x_train, ds.y_train)
    print(f"teacher written: {out}")
    print(f"train_top1={ckpt.metadata['train_top1']} val_top1={ckpt.metadata['val_top1']}")
    print(f"train predictions: correct={props.correct:.6f} incorrect={props.incorrect:.6f}")
    run.finish()
    return 0


_DISTILL_CSV_FIELDS = [
    "row",
    "epoch",
    "method",
    "alpha",
    "beta",
    "tau",
    "seed",
    "total",
    "ce",
    "scd",
    "mcd",
    "kd",
    "masked_all",
    "train_top1",
    "val_top1",
]


def cmd_distill(cfg: RunConfig, seeds=None) -> int:
    cfg.require("distill")
    run = _Run("distill", cfg)
    ds = load_dataset(run.path(cfg["paths.dataset"]))
    teacher = load_checkpoint(run.path(cfg["paths.teacher"]))
    dspec = _distill_spec(cfg)
    seeds = cfg["seeds"] if seeds is None else seeds
    rows = []
    for seed in seeds:
        student_spec = MlpSpec(cfg["student.widths"], init_seed=seed)
        ckpt, logs = distill_student(ds, teacher, student_spec, _train_config(cfg, seed), dspec)
        ckpt.metadata["config_hash"] = run.hash
        ckpt.metadata["seed"] = str(seed)
        save_checkpoint(run.path(f"student-{run.hash}-s{seed}.rldc"), ckpt)
        base = {
            "method": dspec.method.value,
            "alpha": dspec.alpha,
            "beta": dspec.beta,
            "tau": dspec.tau,
            "seed": seed,
        }
        for log in logs:
            rows.append(
                dict(
                    base,
                    row="epoch",
                    epoch=log.epoch,
                    total=log.total,
                    ce=log.ce,
                    scd=log.scd,
                    mcd=log.mcd,
                    kd=log.kd,
                    masked_all=log.masked_all,
                    train_top1=log.train_top1,
                    val_top1=log.val_top1,
                )
            )
        final = logs[-1].val_top1 if logs else 0.0
        rows.append(dict(base, row="summary", val_top1=final))
        print(
            f"{dspec.method.value},{dspec.alpha:g},{dspec.beta:g},{dspec.tau:g},{seed},{final:.6f}"
        )
    emit_csv(run.artifact(".csv"), rows, _DISTILL_CSV_FIELDS)
    run.finish()
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    cfg.require("eval")
    run = _Run("eval", cfg)
    ds = load_dataset(run.path(cfg["paths.dataset"]))
    ckpt_name = cfg["eval.checkpoint"] or cfg["paths.teacher"]
    ckpt = load_checkpoint(run.path(ckpt_name))
    if ckpt.num_classes != ds.num_classes:
        raise IncompatibleTeacher(
            f"checkpoint has {ckpt.num_classes} classes, dataset has {ds.num_classes}"
        )
    rows = []
    for split, x, y in (("train", ds.x_train, ds.y_train), ("val", ds.x_val, ds.y_val)):
        props = prediction_proportions(ckpt, x, y)
        print(f"{split} top1={props.correct:.6f}")
        rows.append({"split": split, "top1": props.correct, "incorrect": props.incorrect})
    emit_csv(run.artifact(".csv"), rows, ["split", "top1", "incorrect"])
    run.finish()
    return 0


def cmd_check_grads(cfg: RunConfig, inject_fault: bool = False) -> int:
    run = _Run("check-grads", cfg)
    reports = run_all_checks(
        instances=cfg["check.instances"],
        seed=cfg["check.seed"],
        step=cfg["check.step"],
        tolerance=cfg["check.tolerance"],
        fault=0.1 if inject_fault else 0.0,
    )
    rows = []
    all_pass = True
    for rep in reports:
        status = "pass" if rep.passed else "FAIL"
        print(
            f"{rep.name:10s} instances={rep.instances:3d} "
            f"max_rel_err={rep.max_rel_err:.3e} max_abs_err={rep.max_abs_err:.3e} {status}"
        )
        rows.append(
            {
                "method": rep.name,
                "instances": rep.instances,
                "max_rel_err": rep.max_rel_err,
                "max_abs_err": rep.max_abs_err,
                "passed": rep.passed,
            }
        )
        all_pass = all_pass and rep.passed
    emit_csv(
        run.artifact(".csv"),
        rows,
        ["method", "instances", "max_rel_err", "max_abs_err", "passed"],
    )
    run.finish()
    return 0 if all_pass else 5


def _load_pair(run: _Run, cfg: RunConfig):
    ds = load_dataset(run.path(cfg["paths.dataset"]))
    teacher = load_checkpoint(run.path(cfg["paths.teacher"]))
    return ds, teacher


def cmd_ablate(cfg: RunConfig, seeds=None, threads: int = 1) -> int:
    cfg.require("ablate")
    run = _Run("ablate", cfg)
    ds, teacher = _load_pair(run, cfg)
    student_spec = MlpSpec(cfg["student.widths"], init_seed=cfg["student.init_seed"])
    records = run_ablation(
        ds,
        teacher,
        student_spec,
        _train_config(cfg),
        _distill_spec(cfg),
        seeds=cfg["seeds"] if seeds is None else seeds,
        threads=threads,
    )
    emit_csv(run.artifact(".csv"), run_records_rows(records), RUN_RECORD_FIELDS)
    for rec in records:
        if rec.seed is None:
            print(f"{rec.label:15s} mean_top1={rec.top1:.6f}")
    run.finish()
    return 0


def cmd_grid(cfg: RunConfig, seeds=None, threads: int = 1) -> int:
    cfg.require("grid")
    run = _Run("grid", cfg)
    ds, teacher = _load_pair(run, cfg)
    student_spec = MlpSpec(cfg["student.widths"], init_seed=cfg["student.init_seed"])
    records = run_grid(
        ds,
        teacher,
        student_spec,
        _train_config(cfg),
        cfg["grid.alphas"],
        cfg["grid.betas"],
        cfg["grid.taus"],
        seeds=cfg["seeds"] if seeds is None else seeds,
        base_spec=_distill_spec(cfg) if cfg["distill.method"] == "RLD" else None,
        threads=threads,
    )
    emit_csv(run.artifact(".csv"), run_records_rows(records), RUN_RECORD_FIELDS)
    means = [r for r in records if r.seed is None]
    best = max(means, key=lambda r: r.top1)
    print(f"grid cells: {len(means)}; best {best.label} mean_top1={best.top1:.6f}")
    run.finish()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rld",
        description="Deterministic desk-scale logit-distillation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train-teacher", "distill", "eval", "check-grads", "ablate", "grid"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to a key=value config file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seeds", help="comma-separated seed list (overrides seeds)")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads for grid/ablation cells (or env RLD_THREADS)",
        )
        if name == "check-grads":
            p.add_argument(
                "--inject-fault",
                action="store_true",
                help="test hook: corrupt one gradient entry so the check must fail",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.values["out_dir"] = args.out
        if args.seeds:
            cfg.values["seeds"] = _int_list(args.seeds)
            cfg.provided.add("seeds")
        threads = args.threads
        if threads is None:
            threads = int(os.environ.get("RLD_THREADS", "1"))
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train-teacher":
            return cmd_train_teacher(cfg)
        if args.command == "distill":
            return cmd_distill(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "check-grads":
            return cmd_check_grads(cfg, inject_fault=args.inject_fault)
        if args.command == "ablate":
            return cmd_ablate(cfg, threads=threads)
        return cmd_grid(cfg, threads=threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IoError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except IncompatibleTeacher as exc:
        print(f"incompatible: {exc}", file=sys.stderr)
        return 4
    except ProbeFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 5
    except DistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

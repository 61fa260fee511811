"""Command-line shell: config parsing with strict key validation, subcommand
dispatch, and atomic result persistence.

Subcommands: verify, train-teacher, distill, sweep-width, incremental,
report. Worker fan-out for sweeps is bounded by the KDLAB_WORKERS
environment variable (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__, results, theory
from .compression import (DatasetSpec, Schedule, TrainConfig, aggregate_rpr,
                          resolve_dataset, train, width_sweep)
from .criteria import KdCriterion, KdVariant
from .data import Dataset
from .incremental import (ALL_METHODS, IlConfig, final_average_accuracy, grid_search_lambda,
                          il_train, split_tasks)
from .nets import load_checkpoint, save_checkpoint


class ConfigError(ValueError):
    """Raised with the offending key path when a config does not validate."""


@dataclass
class ModelSpec:
    teacher_widths: list[int] = field(default_factory=lambda: [256, 256, 128])
    student_widths: list[int] = field(default_factory=lambda: [64, 32])


@dataclass
class CriterionSpec:
    variant: str = "logits_se"
    lam: float | None = None
    lam_feat: float = 3.0
    lam_logit: float = 15.0
    temperature: float = 4.0

    def build(self, variant: str | None = None) -> KdCriterion:
        return KdCriterion(KdVariant(variant or self.variant), lam=self.lam,
                           lam_feat=self.lam_feat, lam_logit=self.lam_logit,
                           temperature=self.temperature)


@dataclass
class SweepSpec:
    widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 256, 512])
    variants: list[str] = field(default_factory=lambda: [
        "weighted_e_features_se", "weighted_h_features_se", "features_se", "logits_se"])


@dataclass
class IncrementalSpec:
    n_tasks: int = 5
    epochs_per_task: int = 12
    method: str = "vanilla"
    lam: float = 1.0
    lam_grid: list[float] | None = None
    grid_fraction: float = 0.2
    si_xi: float = 0.1
    train_fraction: float = 0.8
    shuffle_classes: bool = True


@dataclass
class ExperimentSpec:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    criterion: CriterionSpec = field(default_factory=CriterionSpec)
    schedule: Schedule = field(default_factory=Schedule)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    incremental: IncrementalSpec = field(default_factory=IncrementalSpec)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "results"
    teacher_checkpoint: str | None = None

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, (DatasetSpec, ModelSpec, CriterionSpec, Schedule, SweepSpec,
                              IncrementalSpec)):
                return {f.name: plain(getattr(v, f.name)) for f in fields(v)}
            if isinstance(v, tuple):
                return list(v)
            return v
        return {f.name: plain(getattr(self, f.name)) for f in fields(self)}


_SECTIONS = {
    "dataset": DatasetSpec,
    "model": ModelSpec,
    "criterion": CriterionSpec,
    "schedule": Schedule,
    "sweep": SweepSpec,
    "incremental": IncrementalSpec,
}
_SCALARS = {"seeds": list, "output_dir": str, "teacher_checkpoint": str}


def _build_section(cls, payload: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        if key not in known:
            raise ConfigError(f"unknown key '{path}.{key}'")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid section '{path}': {e}") from e


def parse_config(path_or_dict) -> ExperimentSpec:
    """Load and validate a JSON config; unknown keys are rejected with their
    key path, and paper-default coefficients fill anything omitted."""
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        try:
            with open(path_or_dict) as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed JSON in {path_or_dict}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be a JSON object")
    spec = ExperimentSpec()
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section '{key}' must be an object")
            setattr(spec, key, _build_section(_SECTIONS[key], value, key))
        elif key in _SCALARS:
            setattr(spec, key, value)
        else:
            raise ConfigError(f"unknown key '{key}'")
    if not isinstance(spec.seeds, list) or not all(isinstance(s, int) for s in spec.seeds):
        raise ConfigError("'seeds' must be a list of integers")
    try:
        spec.criterion.build()
    except ValueError as e:
        raise ConfigError(f"invalid section 'criterion': {e}") from e
    if spec.incremental.method not in ALL_METHODS:
        raise ConfigError(f"unknown key 'incremental.method' value {spec.incremental.method!r}")
    return spec


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("KDLAB_WORKERS", "1")))
    except ValueError:
        return 1


def _teacher_path(spec: ExperimentSpec) -> str:
    return spec.teacher_checkpoint or os.path.join(spec.output_dir, "teacher.json")


def cmd_verify(seed: int) -> int:
    reports = theory.run_all_checks(seed=seed)
    print(json.dumps([r.to_dict() for r in reports], indent=2))
    return 0 if all(r.passed for r in reports) else 1


def cmd_train_teacher(spec: ExperimentSpec) -> int:
    cfg = TrainConfig(dataset=spec.dataset, widths=spec.model.teacher_widths,
                      schedule=spec.schedule, criterion=KdCriterion(KdVariant.NONE),
                      seed=spec.seeds[0])
    net, res = train(cfg)
    os.makedirs(spec.output_dir, exist_ok=True)
    path = _teacher_path(spec)
    save_checkpoint(net, path)
    rid = results.run_id(cfg.to_dict(), cfg.seed)
    rows = results.compression_rows(rid, "teacher", cfg.widths[-1], cfg.seed, res)
    results.write_csv_atomic(os.path.join(spec.output_dir, f"teacher-{rid}.csv"),
                             results.COMPRESSION_CSV_HEADER, rows)
    print(f"teacher saved to {path} (test acc {res.final_test_acc:.4f})")
    return 0


def cmd_distill(spec: ExperimentSpec, variant: str | None) -> int:
    teacher = load_checkpoint(_teacher_path(spec))
    crit = spec.criterion.build(variant)
    splits = resolve_dataset(spec.dataset)
    all_rows = []
    for seed in spec.seeds:
        cfg = TrainConfig(dataset=spec.dataset, widths=spec.model.student_widths,
                          schedule=spec.schedule, criterion=crit, seed=seed)
        teacher_arg = None if crit.variant is KdVariant.NONE else teacher
        _, res = train(cfg, teacher=teacher_arg, splits=splits)
        rid = results.run_id(cfg.to_dict(), seed)
        all_rows.extend(results.compression_rows(rid, crit.variant.value,
                                                 cfg.widths[-1], seed, res))
        print(f"seed {seed}: test acc {res.final_test_acc:.4f}")
    rid_all = results.run_id(spec.to_dict(), spec.seeds[0])
    out = os.path.join(spec.output_dir, f"distill-{crit.variant.value}-{rid_all}.csv")
    results.write_csv_atomic(out, results.COMPRESSION_CSV_HEADER, all_rows)
    print(f"wrote {out}")
    return 0


def cmd_sweep_width(spec: ExperimentSpec) -> int:
    teacher = load_checkpoint(_teacher_path(spec))
    base_cfg = TrainConfig(dataset=spec.dataset, widths=spec.model.student_widths,
                           schedule=spec.schedule, criterion=spec.criterion.build())
    variants = [KdVariant(v) for v in spec.sweep.variants]
    splits = resolve_dataset(spec.dataset)
    rows = width_sweep(teacher, base_cfg, spec.sweep.widths, variants, spec.seeds,
                       splits=splits, workers=_workers())
    rid = results.run_id(spec.to_dict(), spec.seeds[0])
    csv_rows = [[rid, r.variant, r.width, r.seed, "test", f"rpr_{r.base}",
                 float("nan") if r.rpr is None else r.rpr] for r in rows]
    csv_rows += [[rid, r.variant, r.width, r.seed, "test", "acc", r.acc_kd]
                 for r in rows if r.base == "vanilla"]
    results.write_csv_atomic(os.path.join(spec.output_dir, f"sweep-{rid}.csv"),
                             results.COMPRESSION_CSV_HEADER, csv_rows)
    summary = aggregate_rpr(rows)
    results.write_json_atomic(os.path.join(spec.output_dir, f"sweep-{rid}.json"), summary)
    results.export_plot_data(summary, os.path.join(spec.output_dir, f"sweep-plot-{rid}.csv"))
    print(f"swept {len(spec.sweep.widths)} widths x {len(variants)} variants "
          f"x {len(spec.seeds)} seeds -> {len(rows)} rows")
    return 0


def cmd_incremental(spec: ExperimentSpec, method: str | None) -> int:
    inc = spec.incremental
    method = method or inc.method
    if method not in ALL_METHODS:
        raise ConfigError(f"unknown method {method!r}")
    full = _incremental_dataset(spec)
    all_rows = []
    finals = []
    for seed in spec.seeds:
        curriculum = split_tasks(full, inc.n_tasks, seed=seed,
                                 train_fraction=inc.train_fraction,
                                 shuffle=inc.shuffle_classes)
        cfg = IlConfig(widths=spec.model.student_widths,
                       schedule=Schedule(epochs=inc.epochs_per_task,
                                         batch_size=spec.schedule.batch_size,
                                         lr=spec.schedule.lr,
                                         momentum=spec.schedule.momentum,
                                         decay_factor=spec.schedule.decay_factor,
                                         decay_at=spec.schedule.decay_at),
                       seed=seed, si_xi=inc.si_xi)
        lam = inc.lam
        if inc.lam_grid and method not in ("vanilla", "joint"):
            lam = grid_search_lambda(curriculum, method, inc.lam_grid, cfg,
                                     data_fraction=inc.grid_fraction)
        if method in ("vanilla", "joint"):
            lam = 0.0
        _, matrix = il_train(curriculum, method, lam, cfg)
        rid = results.run_id({"spec": spec.to_dict(), "method": method, "lam": lam}, seed)
        all_rows.extend(results.incremental_rows(rid, method, seed, matrix))
        finals.append(final_average_accuracy(matrix))
        print(f"seed {seed}: final avg acc {finals[-1]:.4f} (lambda {lam})")
    rid_all = results.run_id(spec.to_dict(), spec.seeds[0])
    out = os.path.join(spec.output_dir, f"incremental-{method}-{rid_all}.csv")
    results.write_csv_atomic(out, results.INCREMENTAL_CSV_HEADER, all_rows)
    results.write_json_atomic(
        os.path.join(spec.output_dir, f"incremental-{method}-{rid_all}.json"),
        {"method": method, "final_acc_mean": float(np.mean(finals)),
         "final_acc_std": float(np.std(finals)), "seeds": spec.seeds})
    print(f"wrote {out}")
    return 0


def _incremental_dataset(spec: ExperimentSpec) -> Dataset:
    from .data import make_blobs
    d = spec.dataset
    if d.kind == "blobs":
        return make_blobs(d.classes, d.dim, d.n_per_class, d.separation, d.seed)
    train_ds, test_ds = resolve_dataset(d)
    # task splitting restandardizes per task, so recombine the raw splits
    return Dataset(x=np.concatenate([train_ds.x, test_ds.x]),
                   y=np.concatenate([train_ds.y, test_ds.y]),
                   k=train_ds.k, provenance=train_ds.provenance)


def cmd_report(in_dir: str) -> int:
    """Rebuild summary JSONs from raw CSVs alone."""
    produced = 0
    for name in sorted(os.listdir(in_dir)):
        if not name.endswith(".csv") or name.startswith("sweep-plot"):
            continue
        path = os.path.join(in_dir, name)
        header, rows = results.read_csv(path)
        if header == results.INCREMENTAL_CSV_HEADER:
            by_method: dict[str, list[float]] = {}
            last_seen = max(int(r[2]) for r in rows) if rows else 0
            for r in rows:
                if int(r[2]) == last_seen:
                    by_method.setdefault(r[1], []).append(float(r[5]))
            summary = {m: {"final_acc_mean": float(np.mean(v)),
                           "final_acc_std": float(np.std(v))}
                       for m, v in sorted(by_method.items())}
        elif header == results.COMPRESSION_CSV_HEADER:
            cells: dict[tuple, list[float]] = {}
            for r in rows:
                key = (r[1], r[2], r[4], r[5])
                cells.setdefault(key, []).append(float(r[6]))
            summary = {"|".join(k): {"mean": float(np.mean(v)), "std": float(np.std(v)),
                                     "n": len(v)}
                       for k, v in sorted(cells.items())}
        else:
            continue
        out = os.path.join(in_dir, name[:-4] + ".report.json")
        results.write_json_atomic(out, summary)
        produced += 1
    print(f"wrote {produced} report files in {in_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kdlab",
                                description="knowledge distillation lab experiments")
    p.add_argument("--version", action="version", version=f"kdlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the numerical verification suite")
    v.add_argument("--seed", type=int, default=0)

    for name, helptext in [("train-teacher", "train and save the teacher model"),
                           ("sweep-width", "sweep student feature widths")]:
        s = sub.add_parser(name, help=helptext)
        s.add_argument("-c", "--config", required=True)

    d = sub.add_parser("distill", help="distill students under one criterion")
    d.add_argument("-c", "--config", required=True)
    d.add_argument("--variant", choices=[v.value for v in KdVariant], default=None)

    i = sub.add_parser("incremental", help="run the task-incremental protocol")
    i.add_argument("-c", "--config", required=True)
    i.add_argument("--method", choices=list(ALL_METHODS), default=None)

    r = sub.add_parser("report", help="regenerate summaries from raw CSVs")
    r.add_argument("--in", dest="in_dir", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.seed)
        if args.command == "report":
            return cmd_report(args.in_dir)
        spec = parse_config(args.config)
        if args.command == "train-teacher":
            return cmd_train_teacher(spec)
        if args.command == "distill":
            return cmd_distill(spec, args.variant)
        if args.command == "sweep-width":
            return cmd_sweep_width(spec)
        if args.command == "incremental":
            return cmd_incremental(spec, args.method)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())

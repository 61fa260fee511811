"""Model-compression protocol: train a frozen teacher, distill students
under each criterion with SGD+momentum, compute recovered-performance
ratios, and sweep the student's penultimate feature width.

Runs are deterministic per seed: model init, transform init, and batch
shuffling draw from separate seed-derived streams, so a lambda=0 run
reproduces the vanilla trajectory bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .criteria import KdCriterion, KdVariant, compute_teacher_signals, kd_total_loss
from .data import Dataset, Standardizer, load_idx_raw, make_blobs, train_test_split
from .nets import LinearTransform, MultiHeadNet


def derive_seed(*parts: int) -> int:
    """Stable child seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class DatasetSpec:
    """Self-contained description of the data a run trains on."""

    kind: str = "blobs"  # "blobs" | "idx"
    classes: int = 10
    dim: int = 32
    n_per_class: int = 200
    separation: float = 3.0
    seed: int = 0
    train_fraction: float = 0.8
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


def resolve_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Materialize (train, test), standardized with train-split statistics."""
    if spec.kind == "blobs":
        full = make_blobs(spec.classes, spec.dim, spec.n_per_class, spec.separation, spec.seed)
        return train_test_split(full, spec.train_fraction, seed=derive_seed(spec.seed, 17))
    if spec.kind == "idx":
        if not (spec.images and spec.labels):
            raise ValueError("idx dataset needs 'images' and 'labels' paths")
        raw_train = load_idx_raw(spec.images, spec.labels)
        if spec.test_images and spec.test_labels:
            stats = Standardizer.fit(raw_train.x)
            return stats.apply(raw_train), stats.apply(
                load_idx_raw(spec.test_images, spec.test_labels))
        return train_test_split(raw_train, spec.train_fraction,
                                seed=derive_seed(spec.seed, 17))
    raise ValueError(f"unknown dataset kind {spec.kind!r}")


@dataclass
class Schedule:
    """SGD schedule: step decay at fixed fractions of the epoch budget."""

    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    decay_factor: float = 0.1
    decay_at: tuple[float, ...] = (0.6, 0.8)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for frac in self.decay_at if epoch >= int(frac * self.epochs))
        return self.lr * self.decay_factor ** drops


@dataclass
class TrainConfig:
    """Everything one training run depends on."""

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    widths: list[int] = field(default_factory=lambda: [64, 32])  # hidden..., feature
    schedule: Schedule = field(default_factory=Schedule)
    criterion: KdCriterion = field(default_factory=lambda: KdCriterion(KdVariant.NONE))
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["criterion"]["variant"] = self.criterion.variant.value
        d["schedule"]["decay_at"] = list(self.schedule.decay_at)
        return d


@dataclass
class RunResult:
    train_acc: list[float]
    test_acc: list[float]
    train_loss: list[float]
    test_loss: list[float]
    final_test_acc: float
    wall_time: float
    seed: int
    config_hash: str


@dataclass
class RprRow:
    variant: str
    width: int
    seed: int
    base: str  # "vanilla" | "hkd"
    acc_kd: float
    acc_base: float
    acc_teacher: float
    rpr: float | None  # None when the denominator is degenerate


class SgdMomentum:
    """Classic SGD with momentum: v = mu*v + g; p -= lr*v."""

    def __init__(self, params, momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            if p.grad is not None:
                v += p.grad
            p.data -= lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def evaluate(net: MultiHeadNet, ds: Dataset, head_index: int = 0) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) on a split, tape-free."""
    if len(ds) == 0:
        return float("nan"), float("nan")
    _, logits = net.forward_numpy(ds.x, head_index)
    pred = np.argmax(logits, axis=1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_p[np.arange(len(ds)), ds.y].mean())
    return float((pred == ds.y).mean()), loss


def _config_hash(config: TrainConfig) -> str:
    from .results import run_id
    return run_id(config.to_dict(), config.seed)


def train(config: TrainConfig, teacher: MultiHeadNet | None = None,
          splits: tuple[Dataset, Dataset] | None = None) -> tuple[MultiHeadNet, RunResult]:
    """One SGD training run; returns the trained net and its metrics.

    The teacher, when given, is frozen: its parameters are asserted
    bit-identical before and after.
    """
    crit = config.criterion
    if crit.needs_teacher and teacher is None:
        raise ValueError(f"criterion {crit.variant.value} needs a teacher")
    if not crit.needs_teacher and teacher is not None:
        raise ValueError("a teacher was supplied but the criterion ignores it")

    start = time.perf_counter()
    train_ds, test_ds = splits if splits is not None else resolve_dataset(config.dataset)
    net = MultiHeadNet.create([train_ds.dim, *config.widths], [train_ds.k],
                              seed=derive_seed(config.seed, 0))
    transform = None
    params = net.parameters()
    if teacher is not None and crit.uses_features:
        rng_t = np.random.default_rng(derive_seed(config.seed, 1))
        transform = LinearTransform(net.feature_dim, teacher.feature_dim, rng_t)
        params = params + transform.parameters()

    teacher_bytes = teacher.param_vector().tobytes() if teacher is not None else None
    opt = SgdMomentum(params, momentum=config.schedule.momentum)
    rng_batches = np.random.default_rng(derive_seed(config.seed, 2))
    n = len(train_ds)
    bs = config.schedule.batch_size

    result = RunResult([], [], [], [], 0.0, 0.0, config.seed, _config_hash(config))
    for epoch in range(config.schedule.epochs):
        lr = config.schedule.lr_at(epoch)
        perm = rng_batches.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            x, yb = train_ds.x[idx], train_ds.y[idx]
            signals = None
            if teacher is not None:
                signals = compute_teacher_signals(teacher, x, yb, crit)
            z, logits = net.forward(x, 0)
            loss = kd_total_loss(crit, z, logits, transform, signals, yb)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
        tr_acc, tr_loss = evaluate(net, train_ds)
        te_acc, te_loss = evaluate(net, test_ds)
        result.train_acc.append(tr_acc)
        result.test_acc.append(te_acc)
        result.train_loss.append(tr_loss)
        result.test_loss.append(te_loss)

    if teacher_bytes is not None and teacher.param_vector().tobytes() != teacher_bytes:
        raise RuntimeError("teacher parameters changed during distillation")
    result.final_test_acc = result.test_acc[-1]
    result.wall_time = time.perf_counter() - start
    return net, result


def rpr(acc_kd: float, acc_base: float, acc_teacher: float) -> float:
    """Recovered performance ratio (may exceed 1 or go negative)."""
    denom = acc_teacher - acc_base
    if abs(denom) < 1e-9:
        raise ValueError("degenerate RPR: teacher and base accuracy coincide")
    return (acc_kd - acc_base) / denom


def _safe_rpr(acc_kd, acc_base, acc_teacher) -> float | None:
    try:
        return rpr(acc_kd, acc_base, acc_teacher)
    except ValueError:
        return None


def width_sweep(
    teacher: MultiHeadNet,
    base_config: TrainConfig,
    widths: list[int],
    variants: list[KdVariant],
    seeds: list[int],
    splits: tuple[Dataset, Dataset] | None = None,
    workers: int = 1,
) -> list[RprRow]:
    """Distill at every (width, variant, seed) against one fixed teacher,
    alongside vanilla and HKD baselines, reporting RPR on both bases."""
    splits = splits if splits is not None else resolve_dataset(base_config.dataset)
    _, test_ds = splits
    acc_teacher, _ = evaluate(teacher, test_ds)

    def config_for(width: int, variant: KdVariant, seed: int) -> TrainConfig:
        crit = KdCriterion(variant, lam=None if variant != base_config.criterion.variant
                           else base_config.criterion.lam)
        return TrainConfig(dataset=base_config.dataset,
                           widths=[*base_config.widths[:-1], width],
                           schedule=base_config.schedule, criterion=crit, seed=seed)

    jobs = []
    for width in widths:
        for seed in seeds:
            jobs.append((width, KdVariant.NONE, seed))
            jobs.append((width, KdVariant.HINTON_KD, seed))
            for v in variants:
                if v not in (KdVariant.NONE, KdVariant.HINTON_KD):
                    jobs.append((width, v, seed))

    def run_job(job):
        width, variant, seed = job
        cfg = config_for(width, variant, seed)
        t = None if variant is KdVariant.NONE else teacher
        _, res = train(cfg, teacher=t, splits=splits)
        return job, res.final_test_acc

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            acc = dict(pool.map(run_job, jobs))
    else:
        acc = dict(run_job(j) for j in jobs)

    rows: list[RprRow] = []
    for width in widths:
        for seed in seeds:
            acc_vanilla = acc[(width, KdVariant.NONE, seed)]
            acc_hkd = acc[(width, KdVariant.HINTON_KD, seed)]
            for v in [KdVariant.NONE, KdVariant.HINTON_KD, *variants]:
                if v is KdVariant.NONE:
                    continue
                a = acc[(width, v, seed)]
                rows.append(RprRow(v.value, width, seed, "vanilla", a, acc_vanilla,
                                   acc_teacher, _safe_rpr(a, acc_vanilla, acc_teacher)))
                rows.append(RprRow(v.value, width, seed, "hkd", a, acc_hkd,
                                   acc_teacher, _safe_rpr(a, acc_hkd, acc_teacher)))
    return rows


def aggregate_rpr(rows: list[RprRow]) -> list[dict]:
    """Seed-averaged summary per (variant, width, base)."""
    cells: dict[tuple, list[RprRow]] = {}
    for r in rows:
        cells.setdefault((r.variant, r.width, r.base), []).append(r)
    out = []
    for (variant, width, base), group in sorted(cells.items()):
        rprs = [g.rpr for g in group if g.rpr is not None]
        accs = [g.acc_kd for g in group]
        out.append({
            "variant": variant, "width": width, "base": base,
            "acc_mean": float(np.mean(accs)), "acc_std": float(np.std(accs)),
            "rpr_mean": float(np.mean(rprs)) if rprs else None,
            "rpr_std": float(np.std(rprs)) if rprs else None,
            "seeds": len(group),
        })
    return out


def hyperparam_protocol(pairs: list, grid: list[float], train_eval,
                        tuning_index: int = 0) -> tuple[float, dict]:
    """Tune lambda on exactly one designated teacher-student pair and freeze
    it for the rest. `train_eval(pair, lam)` returns validation accuracy.

    Returns (chosen lambda, per-pair call counts) so callers can verify the
    non-tuning pairs were never touched.
    """
    if not grid:
        raise ValueError("empty lambda grid")
    if not 0 <= tuning_index < len(pairs):
        raise IndexError(f"tuning pair index {tuning_index} out of range")
    calls = {i: 0 for i in range(len(pairs))}
    best_lam, best_acc = None, -np.inf
    for lam in grid:
        calls[tuning_index] += 1
        score = train_eval(pairs[tuning_index], lam)
        if score > best_acc:
            best_lam, best_acc = lam, score
    return best_lam, calls

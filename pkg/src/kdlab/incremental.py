"""Task-incremental learning: sequential training over exclusive-class
tasks with one linear head per task, output-space regularization against a
frozen snapshot of the previous model, and the parameter-space baselines
(importance-weighted drift penalties).

Evaluation is task-incremental: each test item is routed to its own task's
head, and the report is the average accuracy over all tasks at the end of
the curriculum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compression import Schedule, SgdMomentum, derive_seed
from .criteria import grad_lh, weight_diag
from .data import Dataset, subsample, train_test_split
from .nets import MultiHeadNet

OUTPUT_SPACE_METHODS = ("logits_se", "weighted_h_features_se", "features_se")
PARAM_SPACE_METHODS = ("ewc", "si", "mas", "l2")
ALL_METHODS = ("vanilla", "joint") + OUTPUT_SPACE_METHODS + PARAM_SPACE_METHODS


@dataclass
class Task:
    classes: np.ndarray  # original class ids, sorted
    train: Dataset  # labels remapped to [0, len(classes))
    test: Dataset


@dataclass
class TaskCurriculum:
    tasks: list[Task]

    def __len__(self) -> int:
        return len(self.tasks)


def split_tasks(ds: Dataset, n_tasks: int, seed: int, train_fraction: float = 0.8,
                shuffle: bool = True) -> TaskCurriculum:
    """Partition the classes into n_tasks disjoint groups and build per-task
    standardized train/test splits. Labels are remapped within each task by
    sorted class order, so a 1-task split keeps the original labels."""
    if n_tasks < 1 or ds.k % n_tasks != 0:
        raise ValueError(f"{n_tasks} tasks must evenly divide {ds.k} classes")
    per = ds.k // n_tasks
    order = np.random.default_rng(seed).permutation(ds.k) if shuffle else np.arange(ds.k)
    tasks = []
    for t in range(n_tasks):
        classes = np.sort(order[t * per:(t + 1) * per])
        mask = np.isin(ds.y, classes)
        remap = {c: i for i, c in enumerate(classes)}
        y_local = np.array([remap[c] for c in ds.y[mask]], dtype=np.int64)
        sub = Dataset(x=ds.x[mask], y=y_local, k=per, provenance=ds.provenance)
        train, test = train_test_split(sub, train_fraction, seed=derive_seed(seed, 31, t))
        tasks.append(Task(classes=classes, train=train, test=test))
    return TaskCurriculum(tasks=tasks)


class TeacherSnapshot:
    """Immutable copy of the model (trunk + all heads) at a task boundary."""

    def __init__(self, net: MultiHeadNet):
        self.net = net.copy()
        self.net.freeze()
        self._frozen_bytes = self.net.param_vector().tobytes()

    @property
    def n_heads(self) -> int:
        return len(self.net.heads)

    def unchanged(self) -> bool:
        return self.net.param_vector().tobytes() == self._frozen_bytes

    def features_and_logits(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        z = self.net.trunk.forward_numpy(x)
        return z, [h.forward_numpy(z) for h in self.net.heads]


def d_g_il_logits(net: MultiHeadNet, snapshot: TeacherSnapshot, x: np.ndarray,
                  current_task: int) -> Tensor:
    """Sum over previous heads of the batch-meaned squared logit drift.

    No unit normalization here: with one previous head this is exactly the
    identity-weighted divergence on raw logits.
    """
    if current_task < 2:
        raise ValueError("logit drift regularizer needs at least one previous task")
    n_prev = current_task - 1
    z_s = net.trunk.forward(Tensor(x))
    z_t, teacher_logits = snapshot.features_and_logits(x)
    b = x.shape[0]
    total = None
    for j in range(n_prev):
        diff = ad.sub(net.heads[j].forward(z_s), Tensor(teacher_logits[j]))
        term = ad.scale(ad.sum(ad.square(diff)), 1.0 / b)
        total = term if total is None else ad.add(total, term)
    return total


def d_g_il_features(net: MultiHeadNet, snapshot: TeacherSnapshot, x: np.ndarray,
                    current_task: int, weighted: bool = True) -> Tensor:
    """Sum over previous heads of the feature drift weighted by each head's
    squared mean-squared-logits gradient (labels are invalid for the
    snapshot, so the label-free weighting applies). `weighted=False` gives
    the plain squared-error variant."""
    if current_task < 2:
        raise ValueError("feature drift regularizer needs at least one previous task")
    n_prev = current_task - 1
    z_s = net.trunk.forward(Tensor(x))
    z_t, _ = snapshot.features_and_logits(x)
    b = x.shape[0]
    diff = ad.sub(z_s, Tensor(z_t))
    sq = ad.square(diff)
    total = None
    for j in range(n_prev):
        if weighted:
            w = weight_diag(grad_lh(z_t, snapshot.net.heads[j]), source="lh").w
        else:
            w = np.ones_like(z_t)
        term = ad.scale(ad.sum(ad.mul(sq, Tensor(w))), 1.0 / b)
        total = term if total is None else ad.add(total, term)
    return total


@dataclass
class ImportanceState:
    """Anchor parameters plus per-parameter importance for drift penalties."""

    method: str
    anchor: list[np.ndarray] = field(default_factory=list)
    omega: list[np.ndarray] = field(default_factory=list)
    si_path: list[np.ndarray] = field(default_factory=list)  # running -grad . dtheta
    si_ref: list[np.ndarray] = field(default_factory=list)  # params at last anchor
    si_xi: float = 0.1

    def importance_vector(self) -> np.ndarray:
        return np.concatenate([o.ravel() for o in self.omega]) if self.omega else np.array([])

    def anchor_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.anchor]) if self.anchor else np.array([])


def _zeros_like_params(params) -> list[np.ndarray]:
    return [np.zeros_like(p.data) for p in params]


def _grow(state_list: list[np.ndarray], params) -> None:
    # new heads appended since the last task get fresh accumulator slots
    for p in params[len(state_list):]:
        state_list.append(np.zeros_like(p.data))


def si_accumulate(state: ImportanceState, params, grads_before: list[np.ndarray],
                  params_before: list[np.ndarray]) -> None:
    """Per-step path integral: omega += (-grad) * (theta_after - theta_before)."""
    _grow(state.si_path, params)
    for acc, p, g, pb in zip(state.si_path, params, grads_before, params_before):
        if g is not None:
            acc += (-g) * (p.data - pb)


def consolidate(net: MultiHeadNet, task_train: Dataset, method: str,
                state: ImportanceState | None = None, head_index: int = 0,
                si_xi: float = 0.1, max_samples: int | None = None) -> ImportanceState:
    """Update anchor and importance at a task boundary.

    EWC uses the just-finished task's labels (still accessible here); MAS
    uses the label-free mean-squared-logits criterion; SI folds its running
    path integral; L2 is uniform. EWC/SI/MAS importances add up across
    tasks; the anchor always refreshes to the current parameters.
    """
    if method not in PARAM_SPACE_METHODS:
        raise ValueError(f"unknown parameter-space method {method!r}")
    params = net.parameters()
    if state is None:
        state = ImportanceState(method=method, si_xi=si_xi)
        state.si_ref = [p.data.copy() for p in params]
    _grow(state.omega, params)
    _grow(state.si_path, params)
    _grow(state.si_ref, params)

    n = len(task_train)
    if max_samples is not None:
        n = min(n, max_samples)

    if method == "l2":
        state.omega = [np.ones_like(p.data) for p in params]
    elif method == "ewc":
        fresh = _zeros_like_params(params)
        for i in range(n):
            ad.zero_grads(params)
            _, logits = net.forward(task_train.x[i:i + 1], head_index)
            loss = ad.softmax_cross_entropy(logits, task_train.y[i:i + 1])
            loss.backward()
            for acc, p in zip(fresh, params):
                if p.grad is not None:
                    acc += p.grad * p.grad
        for om, f in zip(state.omega, fresh):
            om += f / n
        ad.zero_grads(params)
    elif method == "mas":
        fresh = _zeros_like_params(params)
        for i in range(n):
            ad.zero_grads(params)
            _, logits = net.forward(task_train.x[i:i + 1], head_index)
            lh = ad.mean(ad.square(logits))  # (1/k) sum_y l_y^2 for one sample
            lh.backward()
            for acc, p in zip(fresh, params):
                if p.grad is not None:
                    acc += np.abs(p.grad)
        for om, f in zip(state.omega, fresh):
            om += f / n
        ad.zero_grads(params)
    elif method == "si":
        for om, w, p, ref in zip(state.omega, state.si_path, params, state.si_ref):
            om += w / ((p.data - ref) ** 2 + state.si_xi)
        state.si_path = _zeros_like_params(params)

    state.anchor = [p.data.copy() for p in params]
    state.si_ref = [p.data.copy() for p in params]
    return state


def drift_penalty(net: MultiHeadNet, state: ImportanceState) -> Tensor:
    """(theta - anchor)^T diag(Omega) (theta - anchor) on the tape (the
    caller applies lambda/2)."""
    params = net.parameters()
    total = None
    for p, a, om in zip(params, state.anchor, state.omega):
        diff = ad.sub(p, Tensor(a))
        term = ad.sum(ad.mul(ad.square(diff), Tensor(om)))
        total = term if total is None else ad.add(total, term)
    return total if total is not None else Tensor(0.0)


@dataclass
class IlConfig:
    widths: list[int] = field(default_factory=lambda: [64, 32])
    schedule: Schedule = field(default_factory=lambda: Schedule(epochs=12, lr=0.05))
    seed: int = 0
    si_xi: float = 0.1
    ewc_max_samples: int | None = 512


def evaluate_tasks(net: MultiHeadNet, curriculum: TaskCurriculum, upto: int) -> list[float]:
    """Accuracy per task (own head, own test split) for tasks [0, upto]."""
    out = []
    for j in range(upto + 1):
        task = curriculum.tasks[j]
        pred = net.predict(task.test.x, head_index=j)
        out.append(float((pred == task.test.y).mean()))
    return out


def _fit_task(net: MultiHeadNet, opt: SgdMomentum, task: Task, t: int, method: str,
              lam: float, schedule: Schedule, rng: np.random.Generator,
              snapshot: TeacherSnapshot | None, state: ImportanceState | None) -> None:
    n = len(task.train)
    bs = schedule.batch_size
    params = opt.params
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        perm = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            x, yb = task.train.x[idx], task.train.y[idx]
            _, logits = net.forward(x, t)
            loss = ad.softmax_cross_entropy(logits, yb)
            if lam > 0 and t > 0:
                if method == "logits_se":
                    reg = d_g_il_logits(net, snapshot, x, current_task=t + 1)
                elif method == "weighted_h_features_se":
                    reg = d_g_il_features(net, snapshot, x, current_task=t + 1, weighted=True)
                elif method == "features_se":
                    reg = d_g_il_features(net, snapshot, x, current_task=t + 1, weighted=False)
                elif method in PARAM_SPACE_METHODS:
                    reg = ad.scale(drift_penalty(net, state), 0.5)
                else:
                    reg = None
                if reg is not None:
                    loss = ad.add(loss, ad.scale(reg, lam))
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss in task {t}, epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            if method == "si" and state is not None:
                before = [p.data.copy() for p in params]
                grads = [None if p.grad is None else p.grad.copy() for p in params]
                opt.step(lr)
                si_accumulate(state, params, grads, before)
            else:
                opt.step(lr)


def il_train(curriculum: TaskCurriculum, method: str, lam: float,
             config: IlConfig) -> tuple[MultiHeadNet, list[list[float]]]:
    """Sequential training over the curriculum; returns the final net and
    the accuracy matrix R with R[t][j] = accuracy on task j after task t."""
    if method not in ALL_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {ALL_METHODS}")
    if method == "joint":
        return _joint_train(curriculum, config)

    dim = curriculum.tasks[0].train.dim
    net = MultiHeadNet.create([dim, *config.widths], [], seed=derive_seed(config.seed, 0))
    rng = np.random.default_rng(derive_seed(config.seed, 2))
    snapshot: TeacherSnapshot | None = None
    state: ImportanceState | None = None
    matrix: list[list[float]] = []

    for t, task in enumerate(curriculum.tasks):
        net.add_head(task.train.k)
        opt = SgdMomentum(net.parameters(), momentum=config.schedule.momentum)
        if method == "si" and state is None:
            state = ImportanceState(method="si", si_xi=config.si_xi)
            state.si_ref = [p.data.copy() for p in net.parameters()]
            state.si_path = _zeros_like_params(net.parameters())
        _fit_task(net, opt, task, t, method, lam, config.schedule, rng, snapshot, state)
        matrix.append(evaluate_tasks(net, curriculum, t))
        if t < len(curriculum.tasks) - 1:
            if method in OUTPUT_SPACE_METHODS:
                snapshot = TeacherSnapshot(net)
            elif method in PARAM_SPACE_METHODS:
                state = consolidate(net, task.train, method, state, head_index=t,
                                    si_xi=config.si_xi, max_samples=config.ewc_max_samples)
    return net, matrix


def _joint_train(curriculum: TaskCurriculum, config: IlConfig) -> tuple[MultiHeadNet, list[list[float]]]:
    """Offline upper bound: all tasks trained together, one head each."""
    dim = curriculum.tasks[0].train.dim
    net = MultiHeadNet.create([dim, *config.widths], [], seed=derive_seed(config.seed, 0))
    for task in curriculum.tasks:
        net.add_head(task.train.k)
    opt = SgdMomentum(net.parameters(), momentum=config.schedule.momentum)
    rng = np.random.default_rng(derive_seed(config.seed, 2))

    x_all = np.concatenate([t.train.x for t in curriculum.tasks])
    y_all = np.concatenate([t.train.y for t in curriculum.tasks])
    task_of = np.concatenate([np.full(len(t.train), i) for i, t in enumerate(curriculum.tasks)])
    n, bs = len(y_all), config.schedule.batch_size
    total_epochs = config.schedule.epochs * len(curriculum.tasks)
    sched = Schedule(epochs=total_epochs, batch_size=bs, lr=config.schedule.lr,
                     momentum=config.schedule.momentum,
                     decay_factor=config.schedule.decay_factor,
                     decay_at=config.schedule.decay_at)
    for epoch in range(total_epochs):
        lr = sched.lr_at(epoch)
        perm = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            z = net.trunk.forward(Tensor(x_all[idx]))
            loss = None
            for ti in np.unique(task_of[idx]):
                sel = task_of[idx] == ti
                logits = net.heads[int(ti)].forward(z)
                # route each sample to its own head via a row-selection matmul
                rows = np.flatnonzero(sel)
                picked = ad.matmul(Tensor(_row_selector(rows, len(idx))), logits)
                ce = ad.softmax_cross_entropy(picked, y_all[idx][sel])
                term = ad.scale(ce, len(rows) / len(idx))
                loss = term if loss is None else ad.add(loss, term)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
    matrix = [evaluate_tasks(net, curriculum, len(curriculum.tasks) - 1)]
    return net, matrix


def _row_selector(rows: np.ndarray, n: int) -> np.ndarray:
    sel = np.zeros((len(rows), n))
    sel[np.arange(len(rows)), rows] = 1.0
    return sel


def final_average_accuracy(matrix: list[list[float]]) -> float:
    return float(np.mean(matrix[-1]))


def shrink_curriculum(curriculum: TaskCurriculum, fraction: float, seed: int) -> TaskCurriculum:
    """Per-task stratified subsample of the train splits (test kept whole)."""
    tasks = []
    for t, task in enumerate(curriculum.tasks):
        n = max(task.train.k, int(round(fraction * len(task.train))))
        tasks.append(Task(classes=task.classes,
                          train=subsample(task.train, n, seed=derive_seed(seed, 41, t)),
                          test=task.test))
    return TaskCurriculum(tasks=tasks)


def grid_search_lambda(curriculum: TaskCurriculum, method: str, grid: list[float],
                       config: IlConfig, data_fraction: float = 0.2) -> float:
    """Pick lambda by final average accuracy on a reduced-data curriculum;
    ties go to the smallest lambda."""
    if not grid:
        raise ValueError("empty lambda grid")
    sub = shrink_curriculum(curriculum, data_fraction, seed=config.seed)
    best_lam, best_acc = None, -np.inf
    for lam in grid:
        _, matrix = il_train(sub, method, lam, config)
        acc = final_average_accuracy(matrix)
        if acc > best_acc:
            best_lam, best_acc = lam, acc
    return best_lam

"""Numerical certification of the derivations behind the quadratic criteria:
the vanishing first-order KL term, the Fisher = -expected-Hessian identity,
the cubic order of the KL Taylor remainder, and the constant Hessian of the
mean-squared-logits criterion.

Everything here works on plain numpy vectors; Hessians come from central
finite differences (step 1e-4), gradients from step 1e-5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import softmax
from .criteria import fisher_diag_full
from .nets import LinearHead
from .autodiff import Tensor

GRAD_STEP = 1e-5
HESS_STEP = 1e-4


@dataclass
class VerificationReport:
    """Machine-readable outcome of one numerical check."""

    name: str
    passed: bool
    max_residual: float
    threshold: float
    trials: int
    seed: int
    slope: float | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "passed": bool(self.passed),
            "max_residual": float(self.max_residual),
            "threshold": float(self.threshold),
            "trials": int(self.trials),
            "seed": int(self.seed),
        }
        if self.slope is not None:
            out["slope"] = float(self.slope)
        if self.details:
            out["details"] = self.details
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                               step: float = GRAD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def finite_difference_hessian(f: Callable[[np.ndarray], float], x: np.ndarray,
                              step: float = HESS_STEP) -> np.ndarray:
    """Central-difference Hessian of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size

    def at(i: int, si: float, j: int, sj: float) -> float:
        xp = x.ravel().copy()
        xp[i] += si
        xp[j] += sj
        return float(f(xp.reshape(x.shape)))

    h = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            fpp = at(i, step, j, step)
            fpm = at(i, step, j, -step)
            fmp = at(i, -step, j, step)
            fmm = at(i, -step, j, -step)
            h[i, j] = h[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * step * step)
    return h


def _random_head(rng: np.random.Generator, dim: int, k: int) -> LinearHead:
    w = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, k))
    b = rng.normal(0.0, 0.1, size=k)
    return LinearHead(weight=Tensor(w), bias=Tensor(b))


def _log_probs(head: LinearHead, z: np.ndarray) -> np.ndarray:
    logits = z @ head.weight.data + head.bias.data
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _class_grads(head: LinearHead, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (p, G) with G[y] = d log p_y / dz, computed in closed form."""
    p = softmax(z @ head.weight.data + head.bias.data)
    k = head.n_classes
    G = (np.eye(k) - p[None, :]) @ head.weight.data.T
    return p, G


def check_first_order_zero(dim: int = 8, k: int = 4, trials: int = 100,
                           seed: int = 0, threshold: float = 1e-9) -> VerificationReport:
    """The expectation of the log-probability gradient under the model's own
    distribution cancels, so the linear Taylor term of KL vanishes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, dim + 1))
        c = int(rng.integers(2, k + 1))
        head = _random_head(rng, d, c)
        z = rng.uniform(-2, 2, size=d)
        dz = rng.uniform(-2, 2, size=d)
        p, G = _class_grads(head, z)
        first_order = dz @ (p @ G)  # dz^T sum_y p_y grad log p_y, summed numerically
        worst = max(worst, abs(float(first_order)))
    return VerificationReport(name="first_order_term_zero", passed=worst < threshold,
                              max_residual=worst, threshold=threshold,
                              trials=trials, seed=seed)


def check_fisher_neg_hessian(dim: int = 6, k: int = 4, trials: int = 20,
                             seed: int = 1, threshold: float = 1e-5) -> VerificationReport:
    """Full-matrix identity: -sum_y p_y Hessian(log p_y) equals the Fisher
    matrix sum_y p_y g_y g_y^T, with the Hessian from finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    off_diag_mass = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, dim + 1))
        c = int(rng.integers(2, k + 1))
        head = _random_head(rng, d, c)
        z = rng.uniform(-2, 2, size=d)
        p, G = _class_grads(head, z)
        fisher = (p[:, None, None] * (G[:, :, None] * G[:, None, :])).sum(axis=0)
        hess = np.zeros((d, d))
        for y in range(c):
            hy = finite_difference_hessian(lambda v, y=y: float(_log_probs(head, v)[y]), z)
            hess += p[y] * hy
        worst = max(worst, float(np.max(np.abs(hess + fisher))))
        fro = np.linalg.norm(fisher)
        if fro > 0:
            off = fisher - np.diag(np.diag(fisher))
            off_diag_mass = max(off_diag_mass, float(np.linalg.norm(off) / fro))
        # the diagonal cast used in training must match the full matrix's diagonal
        diag = fisher_diag_full(z, head).w
        worst = max(worst, float(np.max(np.abs(diag - np.diag(fisher)))))
    return VerificationReport(name="fisher_equals_neg_expected_hessian",
                              passed=worst < threshold, max_residual=worst,
                              threshold=threshold, trials=trials, seed=seed,
                              details={"max_offdiag_frobenius_fraction": off_diag_mass})


def _kl_at(head: LinearHead, z: np.ndarray, z2: np.ndarray) -> float:
    lp = _log_probs(head, z)
    lq = _log_probs(head, z2)
    p = np.exp(lp)
    return float(np.sum(p * (lp - lq)))


def check_taylor_remainder(dim: int = 8, k: int = 5,
                           scales: tuple[float, ...] = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
                           trials: int = 10, seed: int = 2,
                           slope_range: tuple[float, float] = (2.5, 3.5)) -> VerificationReport:
    """KL minus the half-quadratic Fisher form decays with cubic order in the
    perturbation scale; the log-log slope of the error certifies it."""
    if not all(a > b for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing")
    rng = np.random.default_rng(seed)
    slopes = []
    diag_slopes = []
    rel_at_mid = 0.0
    for _ in range(trials):
        head = _random_head(rng, dim, k)
        z = rng.uniform(-1, 1, size=dim)
        dz = rng.normal(size=dim)
        dz /= np.linalg.norm(dz)
        p, G = _class_grads(head, z)
        fisher = (p[:, None, None] * (G[:, :, None] * G[:, None, :])).sum(axis=0)
        quad_full = float(dz @ fisher @ dz)
        quad_diag = float((dz * dz) @ np.diag(fisher))
        errs_full, errs_diag, used = [], [], []
        for s in scales:
            kl = _kl_at(head, z, z + s * dz)
            e_full = abs(kl - 0.5 * s * s * quad_full)
            e_diag = abs(kl - 0.5 * s * s * quad_diag)
            if s == 1e-2 and kl > 0:
                rel_at_mid = max(rel_at_mid, e_full / kl)
            if e_full > 1e-14:  # below this the floating-point floor dominates
                errs_full.append(e_full)
                errs_diag.append(e_diag)
                used.append(s)
        if len(used) >= 3:
            slopes.append(float(np.polyfit(np.log(used), np.log(errs_full), 1)[0]))
            positive = [(s, e) for s, e in zip(used, errs_diag) if e > 1e-14]
            if len(positive) >= 3:
                ls, le = zip(*positive)
                diag_slopes.append(float(np.polyfit(np.log(ls), np.log(le), 1)[0]))
    lo, hi = slope_range
    slope = float(np.median(slopes))
    ok = all(lo <= s <= hi for s in slopes) and rel_at_mid <= 0.10
    return VerificationReport(name="kl_taylor_remainder_cubic", passed=ok,
                              max_residual=rel_at_mid, threshold=0.10,
                              trials=trials, seed=seed, slope=slope,
                              details={"slopes": [round(s, 3) for s in slopes],
                                       "diag_form_slopes": [round(s, 3) for s in diag_slopes],
                                       "slope_range": [lo, hi]})


def check_lh_hessian_identity(k: int = 5, trials: int = 5, seed: int = 3,
                              threshold: float = 1e-7) -> VerificationReport:
    """The mean-squared-logits criterion has constant Hessian (2/k) * I in
    logit space, which is why its weighting degenerates to the identity."""
    if k < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    target = (2.0 / k) * np.eye(k)
    worst = 0.0
    for _ in range(trials):
        base = rng.uniform(-3, 3, size=k)
        h = finite_difference_hessian(lambda l: float(np.mean(l * l)), base)
        worst = max(worst, float(np.max(np.abs(h - target))))
    return VerificationReport(name="mean_squared_logits_hessian_identity",
                              passed=worst < threshold, max_residual=worst,
                              threshold=threshold, trials=trials, seed=seed)


def run_all_checks(seed: int = 0) -> list[VerificationReport]:
    """The full suite with per-check seeds derived from one base seed."""
    return [
        check_first_order_zero(dim=16, k=10, trials=100, seed=seed),
        check_fisher_neg_hessian(dim=8, k=5, trials=20, seed=seed + 1),
        check_taylor_remainder(seed=seed + 2),
        check_lh_hessian_identity(k=5, seed=seed + 3),
    ]

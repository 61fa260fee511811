"""Distillation criteria: KL divergence, the gradient-weighted generalized
divergence, its weighting diagonals, normalizations, and the loss variants.

Teacher-side quantities are plain numpy arrays (detached by construction);
student-side quantities are autodiff tensors so gradients flow into the
student and the feature transform only. Weighting gradients use closed
forms rather than the tape, which also cross-checks the tape in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import LinearHead, LinearTransform, MultiHeadNet


class KdVariant(str, Enum):
    WEIGHTED_E_FEATURES_SE = "weighted_e_features_se"
    WEIGHTED_H_FEATURES_SE = "weighted_h_features_se"
    FEATURES_SE = "features_se"
    LOGITS_SE = "logits_se"
    COMBINED_BC = "combined_bc"
    HINTON_KD = "hinton_kd"
    NONE = "none"


FEATURE_VARIANTS = {
    KdVariant.WEIGHTED_E_FEATURES_SE,
    KdVariant.WEIGHTED_H_FEATURES_SE,
    KdVariant.FEATURES_SE,
    KdVariant.COMBINED_BC,
}

# Distillation coefficients: 3 for features, 15 for logits, 1 for the
# combined criterion. HKD gets 1 (its temperature does the softening).
DEFAULT_LAMBDA = {
    KdVariant.WEIGHTED_E_FEATURES_SE: 3.0,
    KdVariant.WEIGHTED_H_FEATURES_SE: 3.0,
    KdVariant.FEATURES_SE: 3.0,
    KdVariant.LOGITS_SE: 15.0,
    KdVariant.COMBINED_BC: 1.0,
    KdVariant.HINTON_KD: 1.0,
    KdVariant.NONE: 0.0,
}


@dataclass
class KdCriterion:
    """A distillation variant plus its coefficients."""

    variant: KdVariant
    lam: float | None = None  # None picks the variant default
    lam_feat: float = 3.0
    lam_logit: float = 15.0
    temperature: float = 4.0

    def __post_init__(self):
        self.variant = KdVariant(self.variant)
        if self.lam is None:
            self.lam = DEFAULT_LAMBDA[self.variant]
        if self.lam < 0 or self.lam_feat < 0 or self.lam_logit < 0:
            raise ValueError("distillation coefficients must be nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def uses_features(self) -> bool:
        return self.variant in FEATURE_VARIANTS

    @property
    def needs_teacher(self) -> bool:
        return self.variant is not KdVariant.NONE


@dataclass
class WeightDiag:
    """Nonnegative per-feature importance weights; rows index batch samples."""

    w: np.ndarray
    source: str  # "le" | "lh" | "identity" | "fisher"
    normalized: bool = False
    clamp_fraction: float = 0.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if np.any(self.w < 0):
            raise ValueError("importance weights must be nonnegative")

    @classmethod
    def identity(cls, shape) -> "WeightDiag":
        return cls(w=np.ones(shape), source="identity", normalized=True)


@dataclass
class TeacherSignals:
    """Frozen per-batch teacher outputs: features, logits, probabilities,
    and the importance diagonal for the configured criterion."""

    z: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    weight: WeightDiag | None = None

    def __post_init__(self):
        row_sums = self.probs.sum(axis=-1)
        if np.max(np.abs(row_sums - 1.0)) > 1e-12:
            raise ValueError("teacher probabilities must sum to 1 per row")


def kl_divergence(p_t: np.ndarray, p_s: np.ndarray) -> float:
    """Batch-meaned sum(p_t * log(p_t / p_s)); zero teacher mass contributes 0."""
    p_t = np.atleast_2d(np.asarray(p_t, dtype=np.float64))
    p_s = np.atleast_2d(np.asarray(p_s, dtype=np.float64))
    if p_t.shape != p_s.shape:
        raise ValueError(f"kl_divergence: shape mismatch {p_t.shape} vs {p_s.shape}")
    for name, p in (("p_t", p_t), ("p_s", p_s)):
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError(f"kl_divergence: {name} rows must sum to 1")
    mask = p_t > 0
    if np.any(p_s[mask] < 1e-300):
        raise ValueError("kl_divergence: student probability underflow where teacher mass > 0")
    terms = np.zeros_like(p_t)
    terms[mask] = p_t[mask] * (np.log(p_t[mask]) - np.log(p_s[mask]))
    return float(terms.sum(axis=1).mean())


def _rows(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z[None, :] if z.ndim == 1 else z


def _like(out: np.ndarray, z) -> np.ndarray:
    return out[0] if np.asarray(z).ndim == 1 else out


def fisher_diag_full(z_t, head: LinearHead) -> WeightDiag:
    """Diagonal of the Fisher information of the head's class distribution,
    marginalizing over all classes: F_ii = sum_y p_y (d log p_y / dz_i)^2."""
    z = _rows(z_t)
    p = ad.softmax(z @ head.weight.data + head.bias.data)  # (b, k)
    k = head.n_classes
    diag = np.zeros((z.shape[0], z.shape[1]))
    eye = np.eye(k)
    for y in range(k):
        g = (eye[y][None, :] - p) @ head.weight.data.T  # (b, feat)
        diag += p[:, y][:, None] * g * g
    return WeightDiag(w=_like(diag, z_t), source="fisher")


def grad_le(z_t, head: LinearHead, y_star) -> np.ndarray:
    """d/dz of log p_{y*}: the head transpose applied to (onehot - p)."""
    z = _rows(z_t)
    y = np.atleast_1d(np.asarray(y_star, dtype=np.int64))
    k = head.n_classes
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"grad_le: label out of range [0, {k})")
    p = ad.softmax(z @ head.weight.data + head.bias.data)
    e = np.zeros_like(p)
    e[np.arange(z.shape[0]), y] = 1.0
    g = (e - p) @ head.weight.data.T
    return _like(g, z_t)


def grad_lh(z_t, head: LinearHead) -> np.ndarray:
    """d/dz of the mean-squared logits: (2/k) * head^T l."""
    z = _rows(z_t)
    l = z @ head.weight.data + head.bias.data
    g = (2.0 / head.n_classes) * (l @ head.weight.data.T)
    return _like(g, z_t)


def weight_diag(grad: np.ndarray, source: str = "le") -> WeightDiag:
    """diag(g g^T): elementwise squared gradient."""
    g = np.asarray(grad, dtype=np.float64)
    return WeightDiag(w=g * g, source=source)


def normalize_weight_diag(wd: WeightDiag) -> WeightDiag:
    """Standardize each weight row to mean 1 / unit population variance,
    clamping any negatives (possible after shifting) back to 0.

    Degenerate rows (population std < 1e-12) become all-ones.
    """
    w = _rows(wd.w)
    if w.shape[1] < 2:
        raise ValueError("normalize_weight_diag: need at least 2 entries")
    mu = w.mean(axis=1, keepdims=True)
    sigma = w.std(axis=1, keepdims=True)  # population std
    degenerate = sigma < 1e-12
    safe_sigma = np.where(degenerate, 1.0, sigma)
    out = (w - mu) / safe_sigma + 1.0
    out = np.where(degenerate, 1.0, out)
    clamp_fraction = float(np.mean(out < 0))
    out = np.maximum(out, 0.0)
    return WeightDiag(w=_like(out, wd.w), source=wd.source, normalized=True,
                      clamp_fraction=clamp_fraction)


def normalize_unit(z):
    """Per-row unit L2 normalization, z / max(||z||, 1e-12).

    Tensors stay on the tape; arrays are handled in numpy.
    """
    if isinstance(z, Tensor):
        return ad.row_normalize(z)
    arr = _rows(z)
    norms = np.maximum(np.linalg.norm(arr, axis=1, keepdims=True), 1e-12)
    return _like(arr / norms, z)


def d_g(z_s, z_t, w) -> Tensor:
    """Generalized divergence: batch mean of sum_i w_i (z_s_i - z_t_i)^2.

    Differentiable in z_s only; z_t and w enter as constants. 1-D inputs
    are a batch of one.
    """
    w_arr = w.w if isinstance(w, WeightDiag) else np.asarray(w, dtype=np.float64)
    zs = ad.as_tensor(z_s)
    zt = np.asarray(z_t.data if isinstance(z_t, Tensor) else z_t, dtype=np.float64)
    if zs.data.shape != zt.shape:
        raise ValueError(f"d_g: shape mismatch {zs.data.shape} vs {zt.shape}")
    w_mat = np.broadcast_to(w_arr, zs.data.shape)
    b = 1 if zs.data.ndim == 1 else zs.data.shape[0]
    diff = ad.sub(zs, Tensor(zt))
    weighted = ad.mul(ad.square(diff), Tensor(w_mat))
    return ad.scale(ad.sum(weighted), 1.0 / b)


def d_g_mc(z_s, z_t, w) -> Tensor:
    """d_g on unit-normalized vectors; z_s is the (transformed) student map."""
    zs_hat = normalize_unit(ad.as_tensor(z_s))
    zt_hat = normalize_unit(np.asarray(z_t.data if isinstance(z_t, Tensor) else z_t,
                                       dtype=np.float64))
    return d_g(zs_hat, zt_hat, w)


def d_g_bc(l_s, l_t, z_s, z_t, w_e, lam_logit: float = 15.0, lam_feat: float = 3.0) -> Tensor:
    """Combined criterion: lam_L * SE(normalized logits) + lam_F * weighted
    SE(normalized features) with the label-gradient weighting."""
    logits_term = d_g_mc(l_s, l_t, WeightDiag.identity(np.shape(l_t)))
    feature_term = d_g_mc(z_s, z_t, w_e)
    return ad.add(ad.scale(logits_term, lam_logit), ad.scale(feature_term, lam_feat))


def hkd_loss(l_s, l_t, temperature: float = 4.0) -> Tensor:
    """Softened-softmax distillation: T^2 * KL(softmax(l_t/T) || softmax(l_s/T))."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    ls = l_s if isinstance(l_s, Tensor) else Tensor(_rows(l_s))
    lt = _rows(np.asarray(l_t, dtype=np.float64))
    p_t = ad.softmax(lt / temperature)
    log_p_t = np.log(np.maximum(p_t, 1e-300))
    log_q = ad.log_softmax(ad.scale(ls, 1.0 / temperature))
    # KL = sum p_t (log p_t - log q), averaged over the batch
    cross = ad.mul(log_q, Tensor(p_t))
    const = float((p_t * log_p_t).sum(axis=1).mean())
    b = lt.shape[0]
    kl = ad.add(ad.scale(ad.sum(cross), -1.0 / b), Tensor(const))
    return ad.scale(kl, temperature ** 2)


def compute_teacher_signals(
    teacher: MultiHeadNet,
    x: np.ndarray,
    labels: np.ndarray | None,
    criterion: KdCriterion,
    head_index: int = 0,
) -> TeacherSignals:
    """Run the frozen teacher and build the per-batch importance weights."""
    z, logits = teacher.forward_numpy(x, head_index)
    probs = ad.softmax(logits)
    head = teacher.heads[head_index]
    variant = criterion.variant
    if variant in (KdVariant.WEIGHTED_E_FEATURES_SE, KdVariant.COMBINED_BC):
        if labels is None:
            raise ValueError(f"criterion {variant.value} requires labels for its weighting")
        wd = normalize_weight_diag(weight_diag(grad_le(z, head, labels), source="le"))
    elif variant is KdVariant.WEIGHTED_H_FEATURES_SE:
        wd = normalize_weight_diag(weight_diag(grad_lh(z, head), source="lh"))
    elif variant in (KdVariant.FEATURES_SE, KdVariant.LOGITS_SE):
        wd = WeightDiag.identity(z.shape if variant is KdVariant.FEATURES_SE else logits.shape)
    else:
        wd = None
    return TeacherSignals(z=z, logits=logits, probs=probs, weight=wd)


def kd_total_loss(
    criterion: KdCriterion,
    student_features: Tensor,
    student_logits: Tensor,
    transform: LinearTransform | None,
    teacher: TeacherSignals | None,
    labels: np.ndarray,
) -> Tensor:
    """Cross-entropy plus lambda times the configured divergence."""
    ce = ad.softmax_cross_entropy(student_logits, labels)
    variant = criterion.variant
    if variant is KdVariant.NONE:
        return ce
    if teacher is None:
        raise ValueError(f"criterion {variant.value} requires teacher signals")

    if variant is KdVariant.LOGITS_SE:
        div = d_g_mc(student_logits, teacher.logits, teacher.weight)
    elif variant is KdVariant.HINTON_KD:
        div = hkd_loss(student_logits, teacher.logits, criterion.temperature)
    else:
        if transform is None:
            raise ValueError(f"criterion {variant.value} requires the feature transform")
        if transform.out_dim != teacher.z.shape[-1]:
            raise ValueError(
                f"transform output dim {transform.out_dim} != teacher feature dim {teacher.z.shape[-1]}")
        z_s = transform.forward(student_features)
        if variant is KdVariant.COMBINED_BC:
            div = d_g_bc(student_logits, teacher.logits, z_s, teacher.z, teacher.weight,
                         lam_logit=criterion.lam_logit, lam_feat=criterion.lam_feat)
        else:
            if teacher.weight is None:
                raise ValueError(f"criterion {variant.value} requires an importance weighting")
            div = d_g_mc(z_s, teacher.z, teacher.weight)
    return ad.add(ce, ad.scale(div, criterion.lam))

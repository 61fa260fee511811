"""Deterministic data sources: a Gaussian-blob classification generator and
an IDX-format image loader, plus stratified subsampling and splitting.

All randomness flows from explicit seeds. Standardization statistics are
always computed on a train split and applied to its test split.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for IDX parsing failures."""


class IdxBadMagic(IdxError):
    pass


class IdxTruncated(IdxError):
    pass


class IdxCountMismatch(IdxError):
    pass


@dataclass
class Dataset:
    """Immutable feature/label table for one split."""

    x: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) int64 in [0, k)
    k: int
    provenance: str

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ValueError(f"bad dataset shapes x={self.x.shape} y={self.y.shape}")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.k):
            raise ValueError(f"labels outside [0, {self.k})")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass
class Standardizer:
    """Per-dimension affine normalization fitted on a train split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        return cls(mean=mean, std=np.where(std < 1e-12, 1.0, std))

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset(x=(ds.x - self.mean) / self.std, y=ds.y, k=ds.k,
                       provenance=ds.provenance)


def make_blobs(k: int, d: int, n_per_class: int, separation: float, seed: int) -> Dataset:
    """Balanced k-class dataset of unit-variance isotropic Gaussians whose
    seed-deterministic centers are pairwise at least `separation` apart."""
    if k < 2:
        raise ValueError("need at least 2 classes")
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < k:
        cand = rng.normal(0.0, separation, size=d)
        if all(np.linalg.norm(cand - c) >= separation for c in centers):
            centers.append(cand)
        attempts += 1
        if attempts > 1000 * k:
            raise RuntimeError("could not place blob centers; increase dim or lower separation")
    x = np.concatenate([c + rng.normal(size=(n_per_class, d)) for c in centers])
    y = np.repeat(np.arange(k), n_per_class)
    order = rng.permutation(len(y))
    tag = f"blobs(k={k},d={d},n={n_per_class},sep={separation},seed={seed})"
    return Dataset(x=x[order], y=y[order], k=k, provenance=tag)


def _read_be_u32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise IdxTruncated(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx_raw(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair with pixels scaled to [0, 1] but
    not yet standardized (pre-decompressed; gzip not handled)."""
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lbl_buf = f.read()

    magic = _read_be_u32(img_buf, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxBadMagic(f"{images_path}: expected image magic {IDX_IMAGE_MAGIC:#010x}, got {magic:#010x}")
    n = _read_be_u32(img_buf, 4, images_path)
    rows = _read_be_u32(img_buf, 8, images_path)
    cols = _read_be_u32(img_buf, 12, images_path)
    need = 16 + n * rows * cols
    if len(img_buf) < need:
        raise IdxTruncated(f"{images_path}: need {need} bytes, have {len(img_buf)}")
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * rows * cols, offset=16)

    magic = _read_be_u32(lbl_buf, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise IdxBadMagic(f"{labels_path}: expected label magic {IDX_LABEL_MAGIC:#010x}, got {magic:#010x}")
    n_lbl = _read_be_u32(lbl_buf, 4, labels_path)
    if len(lbl_buf) < 8 + n_lbl:
        raise IdxTruncated(f"{labels_path}: need {8 + n_lbl} bytes, have {len(lbl_buf)}")
    if n_lbl != n:
        raise IdxCountMismatch(f"{n} images but {n_lbl} labels")
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, count=n_lbl, offset=8).astype(np.int64)

    x = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    digest = hashlib.sha256(img_buf).hexdigest()[:12]
    k = int(labels.max()) + 1 if n else 0
    return Dataset(x=x, y=labels, k=k, provenance=f"idx(sha256:{digest})")


def load_idx(images_path: str, labels_path: str,
             stats: Standardizer | None = None) -> Dataset:
    """Load and standardize an IDX pair; pass the train split's
    `Standardizer` via `stats` when loading a test pair."""
    ds = load_idx_raw(images_path, labels_path)
    fitted = stats if stats is not None else Standardizer.fit(ds.x)
    return fitted.apply(ds)


def _stratified_indices(y: np.ndarray, quota: dict[int, int],
                        rng: np.random.Generator) -> np.ndarray:
    picks = []
    for cls, take in quota.items():
        idx = np.flatnonzero(y == cls)
        picks.append(rng.permutation(idx)[:take])
    return np.sort(np.concatenate(picks))


def subsample(ds: Dataset, n: int, seed: int) -> Dataset:
    """Class-stratified deterministic subsample of n rows (proportions kept
    within one item per class)."""
    if not 0 < n <= len(ds):
        raise ValueError(f"subsample size {n} not in (0, {len(ds)}]")
    rng = np.random.default_rng(seed)
    counts = np.bincount(ds.y, minlength=ds.k)
    exact = counts * (n / len(ds))
    take = np.floor(exact).astype(int)
    # distribute the remainder by largest fractional part
    order = np.argsort(-(exact - take))
    for cls in order[: n - take.sum()]:
        take[cls] += 1
    quota = {c: int(t) for c, t in enumerate(take) if t > 0}
    idx = _stratified_indices(ds.y, quota, rng)
    return Dataset(x=ds.x[idx], y=ds.y[idx], k=ds.k, provenance=ds.provenance)


def train_test_split(ds: Dataset, frac: float, seed: int,
                     standardize: bool = True) -> tuple[Dataset, Dataset]:
    """Stratified split; `frac` is the train fraction. When `standardize`,
    both splits are normalized with statistics fitted on the train split."""
    if not 0 < frac <= 1:
        raise ValueError(f"train fraction {frac} not in (0, 1]")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in range(ds.k):
        idx = rng.permutation(np.flatnonzero(ds.y == cls))
        cut = int(round(frac * len(idx)))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx)) if any(len(i) for i in test_idx) \
        else np.array([], dtype=np.int64)
    train = Dataset(x=ds.x[tr], y=ds.y[tr], k=ds.k, provenance=ds.provenance)
    test = Dataset(x=ds.x[te].reshape(-1, ds.dim), y=ds.y[te], k=ds.k,
                   provenance=ds.provenance)
    if standardize:
        stats = Standardizer.fit(train.x)
        train, test = stats.apply(train), stats.apply(test)
    return train, test

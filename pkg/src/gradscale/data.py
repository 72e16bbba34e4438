"""Seeded synthetic classification data and mini-batch ordering."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CountError, ShapeError

KINDS = ("gaussian-separable", "gaussian-overlap", "imbalanced-subsample")
PATTERNS = ("long-tailed", "step")


@dataclass(frozen=True)
class ImbalanceSpec:
    pattern: str
    ratio: float

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown imbalance pattern {self.pattern!r}")
        if not self.ratio > 1:
            raise ValueError("imbalance ratio must exceed 1")


@dataclass(frozen=True)
class DatasetSpec:
    """``separation`` is the distance between neighbouring class means.

    For ``gaussian-separable`` each class is truncated to its own slab along
    the mean direction, leaving a gap of ``margin`` between slabs.
    """

    kind: str = "gaussian-separable"
    num_classes: int = 2
    base_count: int = 100
    feature_dim: int = 2
    seed: int = 0
    imbalance: ImbalanceSpec | None = None
    val_per_class: int = 500
    separation: float = 4.0
    margin: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.num_classes < 2 or self.base_count < 1 or self.feature_dim < 1:
            raise ValueError("num_classes >= 2, base_count >= 1, feature_dim >= 1 required")
        if self.kind == "imbalanced-subsample" and self.imbalance is None:
            raise ValueError("imbalanced-subsample needs an imbalance spec")
        if self.kind == "gaussian-separable" and self.margin >= self.separation:
            raise ValueError("margin must be smaller than separation")


@dataclass(eq=False)
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    num_classes: int

    @property
    def feature_dim(self) -> int:
        return self.X_train.shape[1]

    @property
    def n_train(self) -> int:
        return self.X_train.shape[0]

    def train_counts(self) -> list[int]:
        return np.bincount(self.y_train, minlength=self.num_classes).tolist()

    def val_counts(self) -> list[int]:
        return np.bincount(self.y_val, minlength=self.num_classes).tolist()

    def onehot(self, labels: np.ndarray) -> np.ndarray:
        out = np.zeros((labels.shape[0], self.num_classes))
        out[np.arange(labels.shape[0]), labels] = 1.0
        return out

    def equals(self, other: "Dataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.X_train, other.X_train)
            and np.array_equal(self.y_train, other.y_train)
            and np.array_equal(self.X_val, other.X_val)
            and np.array_equal(self.y_val, other.y_val)
        )


def _floor_count(v: float) -> int:
    # absorb float error so exact integers like 5000 * 100**-1 do not drop to 49
    return int(math.floor(v + 1e-9))


def class_counts(num_classes: int, base_count: int, imbalance: ImbalanceSpec) -> list[int]:
    """Per-class training counts, majority class first.

    long-tailed: ``floor(n_max * ratio ** (-i / (K - 1)))``.
    step: the first ``ceil(K/2)`` classes keep ``n_max``, the rest get
    ``floor(n_max / ratio)``.
    """
    K, n = num_classes, base_count
    if K < 2 or n < 1:
        raise ValueError("num_classes >= 2 and base_count >= 1 required")
    rho = imbalance.ratio
    if imbalance.pattern == "long-tailed":
        counts = [_floor_count(n * rho ** (-i / (K - 1))) for i in range(K)]
    else:
        n_major = math.ceil(K / 2)
        counts = [n] * n_major + [_floor_count(n / rho)] * (K - n_major)
    if min(counts) < 1:
        raise CountError(
            f"{imbalance.pattern} imbalance with ratio {rho} leaves a class with zero examples "
            f"(base_count={n}, num_classes={K})"
        )
    return counts


def _class_means(rng: np.random.Generator, K: int, D: int, separation: float):
    u = rng.standard_normal(D)
    u /= np.linalg.norm(u)
    offsets = (np.arange(K) - (K - 1) / 2.0) * separation
    return u, offsets


def _sample_class(rng, u, center, n, D, slab=None):
    """Unit-variance Gaussian around ``center * u``; optional slab truncation along ``u``."""
    out = np.empty((0, D))
    while out.shape[0] < n:
        x = rng.standard_normal((2 * (n - out.shape[0]) + 8, D)) + center * u
        if slab is not None:
            s = x @ u
            x = x[(s >= slab[0]) & (s <= slab[1])]
        out = np.vstack([out, x])
    return out[:n]


def generate(spec: DatasetSpec) -> Dataset:
    """Deterministic in ``spec.seed``; validation is balanced at ``val_per_class``."""
    K, D = spec.num_classes, spec.feature_dim
    root = np.random.SeedSequence(spec.seed)
    geom_ss, train_ss, val_ss, sub_ss = root.spawn(4)
    u, offsets = _class_means(np.random.default_rng(geom_ss), K, D, spec.separation)

    if spec.imbalance is not None:
        counts = class_counts(K, spec.base_count, spec.imbalance)
    else:
        counts = [spec.base_count] * K
    pool_counts = [spec.base_count] * K if spec.kind == "imbalanced-subsample" else counts

    slabs = [None] * K
    if spec.kind == "gaussian-separable":
        half = (spec.separation - spec.margin) / 2.0
        slabs = [(c - half, c + half) for c in offsets]

    def draw(ss, per_class):
        rng = np.random.default_rng(ss)
        xs, ys = [], []
        for k in range(K):
            xs.append(_sample_class(rng, u, offsets[k], per_class[k], D, slabs[k]))
            ys.append(np.full(per_class[k], k, dtype=np.int64))
        return np.vstack(xs), np.concatenate(ys)

    X_tr, y_tr = draw(train_ss, pool_counts)
    if spec.kind == "imbalanced-subsample":
        rng = np.random.default_rng(sub_ss)
        keep = []
        for k in range(K):
            idx = np.flatnonzero(y_tr == k)
            keep.append(np.sort(rng.choice(idx, size=counts[k], replace=False)))
        keep = np.concatenate(keep)
        X_tr, y_tr = X_tr[keep], y_tr[keep]
    X_va, y_va = draw(val_ss, [spec.val_per_class] * K)
    return Dataset(X_tr, y_tr, X_va, y_va, K)


@dataclass(frozen=True)
class BatchSampler:
    batch_size: int
    order_seed: int
    policy: str = field(default="shuffle-each-epoch")

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.policy != "shuffle-each-epoch":
            raise ValueError(f"unsupported policy {self.policy!r}")

    def steps_per_epoch(self, n: int) -> int:
        return -(-n // self.batch_size)


def sample_epoch(sampler: BatchSampler, dataset: Dataset | int, epoch: int) -> list[np.ndarray]:
    """Index arrays of the epoch's mini-batches; the last may be short.

    The permutation is drawn from a stream keyed on ``(order_seed, epoch)``.
    """
    n = dataset if isinstance(dataset, int) else dataset.n_train
    rng = np.random.default_rng([sampler.order_seed, epoch])
    perm = rng.permutation(n)
    m = sampler.batch_size
    return [perm[i:i + m] for i in range(0, n, m)]


# -- columnar text export -------------------------------------------------

_MAGIC = "# gradscale-dataset v1"


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a header then one row per example: split, features..., label."""
    path = Path(path)
    lines = [
        _MAGIC,
        f"# dims={dataset.feature_dim} K={dataset.num_classes}",
        "# train_counts=" + ",".join(map(str, dataset.train_counts())),
        "# val_counts=" + ",".join(map(str, dataset.val_counts())),
    ]
    for split, X, y in (("train", dataset.X_train, dataset.y_train), ("val", dataset.X_val, dataset.y_val)):
        for row, lab in zip(X, y):
            lines.append(" ".join([split] + [repr(float(v)) for v in row] + [str(int(lab))]))
    path.write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _MAGIC:
        raise ShapeError(f"{path}: not a gradscale dataset file")
    meta = {}
    for line in text[1:4]:
        for tok in line.lstrip("# ").split():
            k, v = tok.split("=")
            meta[k] = v
    D, K = int(meta["dims"]), int(meta["K"])
    rows = {"train": ([], []), "val": ([], [])}
    for lineno, line in enumerate(text[4:], start=5):
        parts = line.split()
        if len(parts) != D + 2 or parts[0] not in rows:
            raise ShapeError(f"{path}:{lineno}: expected split, {D} features and a label")
        rows[parts[0]][0].append([float(v) for v in parts[1:-1]])
        rows[parts[0]][1].append(int(parts[-1]))

    def arr(split):
        X, y = rows[split]
        return np.array(X, dtype=np.float64).reshape(-1, D), np.array(y, dtype=np.int64)

    ds = Dataset(*arr("train"), *arr("val"), K)
    expected = [int(c) for c in meta["train_counts"].split(",")]
    if ds.train_counts() != expected:
        raise ShapeError(f"{path}: class counts do not match header")
    return ds

"""Synthetic class-imbalanced meta-datasets, layer batch sampling and feature files.

Features are drawn from Gaussian class-conditional clusters whose means are
shared by every dataset generated with the same ``means_seed``; datasets only
differ in how labels are distributed across agents.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from surf import seeding
from surf.errors import FormatError, ParameterError

META_TRAIN = "meta-train"
META_TEST = "meta-test"


@dataclass
class FLDataset:
    """Per-agent train/test shards.

    ``x_train`` has shape ``(n, m_train, p)`` and ``y_train`` ``(n, m_train)``
    with integer labels; likewise for the test split.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    label_distribution: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.label_distribution is None:
            self.label_distribution = empirical_label_distribution(
                np.concatenate([self.y_train, self.y_test], axis=1), self.n_classes
            )
        for y in (self.y_train, self.y_test):
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise ParameterError("labels outside [0, C)")

    @property
    def n(self) -> int:
        return self.x_train.shape[0]

    @property
    def p(self) -> int:
        return self.x_train.shape[2]

    @property
    def m_train(self) -> int:
        return self.x_train.shape[1]

    @property
    def m_test(self) -> int:
        return self.x_test.shape[1]

    @property
    def d(self) -> int:
        return (self.p + 1) * self.n_classes

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x_train, self.y_train

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x_test, self.y_test

    def permute_agents(self, perm: np.ndarray) -> FLDataset:
        """Dataset whose agent ``i`` is agent ``perm[i]`` of this one."""
        return FLDataset(
            self.x_train[perm], self.y_train[perm], self.x_test[perm], self.y_test[perm],
            self.n_classes, self.label_distribution[perm],
        )

    def same_shards(self, other: FLDataset) -> bool:
        return (
            self.n_classes == other.n_classes
            and all(
                np.array_equal(a, b)
                for a, b in zip(
                    (self.x_train, self.y_train, self.x_test, self.y_test),
                    (other.x_train, other.y_train, other.x_test, other.y_test),
                )
            )
        )


@dataclass
class MetaDataset:
    datasets: list[FLDataset]
    role: str = META_TRAIN

    def __post_init__(self):
        if self.role not in (META_TRAIN, META_TEST):
            raise ParameterError(f"unknown meta-dataset role {self.role!r}")
        if self.datasets:
            ref = self.datasets[0]
            dims = (ref.n, ref.p, ref.n_classes, ref.m_train, ref.m_test)
            for ds in self.datasets[1:]:
                if (ds.n, ds.p, ds.n_classes, ds.m_train, ds.m_test) != dims:
                    raise ParameterError("meta-dataset entries disagree on dimensions")

    def __len__(self) -> int:
        return len(self.datasets)

    def __getitem__(self, i: int) -> FLDataset:
        return self.datasets[i]

    def __iter__(self):
        return iter(self.datasets)


def empirical_label_distribution(y: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.stack([np.bincount(row, minlength=n_classes) for row in y]) if y.size else np.zeros((len(y), n_classes))
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.full(counts.shape, 1.0 / n_classes), where=totals > 0)


def class_means(p: int, n_classes: int, class_sep: float, means_seed: int = 0) -> np.ndarray:
    """Cluster centers: random unit directions scaled by ``class_sep``."""
    g = seeding.rng(means_seed, seeding.MEANS)
    u = g.standard_normal((n_classes, p))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return class_sep * u


def gen_dataset(
    rng: np.random.Generator,
    means: np.ndarray,
    n: int,
    m_train: int,
    m_test: int,
    alpha: float,
) -> FLDataset:
    n_classes, p = means.shape
    props = rng.dirichlet(np.full(n_classes, alpha), size=n)
    # Dirichlet draws with tiny alpha can underflow to all zeros
    bad = ~np.isfinite(props).all(axis=1) | (props.sum(axis=1) <= 0)
    props[bad] = np.eye(n_classes)[rng.integers(n_classes, size=bad.sum())]
    props /= props.sum(axis=1, keepdims=True)
    m = m_train + m_test
    y = np.stack([rng.choice(n_classes, size=m, p=pr) for pr in props])
    x = means[y] + rng.standard_normal((n, m, p))
    return FLDataset(
        x_train=x[:, :m_train], y_train=y[:, :m_train],
        x_test=x[:, m_train:], y_test=y[:, m_train:],
        n_classes=n_classes, label_distribution=props,
    )


def gen_meta_dataset(
    n: int,
    p: int,
    C: int,
    m_train: int,
    m_test: int,
    Q: int,
    alpha: float,
    seed: int,
    *,
    class_sep: float = 2.0,
    means_seed: int = 0,
    role: str = META_TRAIN,
) -> MetaDataset:
    """``Q`` datasets whose per-agent class proportions are Dirichlet(alpha)."""
    if not alpha > 0:
        raise ParameterError(f"Dirichlet concentration must be positive, got {alpha}")
    for name, v in (("n", n), ("p", p), ("C", C), ("m_train", m_train), ("m_test", m_test), ("Q", Q)):
        if v < 1:
            raise ParameterError(f"{name} must be positive, got {v}")
    means = class_means(p, C, class_sep, means_seed)
    datasets = [gen_dataset(seeding.rng(seed, seeding.DATA, q), means, n, m_train, m_test, alpha) for q in range(Q)]
    return MetaDataset(datasets, role)


def sample_layer_indices(m_train: int, n: int, L: int, b_count: int, rng: np.random.Generator) -> np.ndarray:
    """Indices ``(L, n, b_count)`` into each agent's train shard.

    A random permutation of the shard is dealt round-robin into ``L`` buckets,
    and each bucket is topped up to ``b_count`` with distinct extra examples,
    so every example reaches at least one layer.
    """
    if b_count > m_train:
        raise ParameterError(f"b_count={b_count} exceeds the shard size {m_train}")
    if L > 0 and b_count < math.ceil(m_train / L):
        raise ParameterError(f"b_count={b_count} below ceil(m_train / L) = {math.ceil(m_train / L)}")
    idx = np.empty((L, n, b_count), dtype=np.int64)
    for i in range(n):
        perm = rng.permutation(m_train)
        for l in range(L):
            bucket = perm[l::L]
            need = b_count - len(bucket)
            if need:
                rest = np.setdiff1d(np.arange(m_train), bucket, assume_unique=True)
                bucket = np.concatenate([bucket, rng.choice(rest, size=need, replace=False)])
            idx[l, i] = rng.permutation(bucket)
    return idx


def flatten_batch(x: np.ndarray, y: np.ndarray, n_classes: int) -> np.ndarray:
    """Rows ``[x_0, onehot(y_0), x_1, onehot(y_1), ...]`` per agent."""
    onehot = np.eye(n_classes)[y]
    return np.concatenate([x, onehot], axis=-1).reshape(x.shape[0], -1)


def sample_layer_batches(dataset: FLDataset, L: int, b_count: int, seed: int) -> np.ndarray:
    """``L`` layer batches stacked as an ``(L, n, b_count * (p + C))`` array."""
    idx = sample_layer_indices(dataset.m_train, dataset.n, L, b_count, seeding.rng(seed, seeding.BATCH))
    return batches_from_indices(dataset, idx)


def batches_from_indices(dataset: FLDataset, idx: np.ndarray) -> np.ndarray:
    rows = np.arange(dataset.n)[:, None]
    return np.stack(
        [flatten_batch(dataset.x_train[rows, ix], dataset.y_train[rows, ix], dataset.n_classes) for ix in idx]
    ).reshape(len(idx), dataset.n, -1)


# ---------------------------------------------------------------------------
# feature files


def write_features(dataset: FLDataset, path) -> None:
    """Write the dataset as ``agent,split,label,f0..f{p-1}`` CSV."""
    header = ["agent", "split", "label"] + [f"f{k}" for k in range(dataset.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(dataset.n):
            for split, xs, ys in (("train", dataset.x_train, dataset.y_train), ("test", dataset.x_test, dataset.y_test)):
                for x, y in zip(xs[i], ys[i]):
                    w.writerow([i, split, int(y)] + [repr(float(v)) for v in x])


def load_features(path, n_classes: int | None = None) -> FLDataset:
    """Read a feature CSV written by :func:`write_features` (or by hand)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    if header[:3] != ["agent", "split", "label"]:
        raise FormatError(f"{path}:1: header must start with agent,split,label")
    p = len(header) - 3
    if header[3:] != [f"f{k}" for k in range(p)] or p == 0:
        raise FormatError(f"{path}:1: feature columns must be f0..f{{p-1}}")
    shards: dict[int, dict[str, tuple[list, list]]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != p + 3:
            raise FormatError(f"{path}:{lineno}: expected {p + 3} fields, got {len(row)}")
        try:
            agent, label = int(row[0]), int(row[2])
            feats = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        split = row[1]
        if split not in ("train", "test"):
            raise FormatError(f"{path}:{lineno}: unknown split {split!r}")
        if agent < 0 or label < 0 or (n_classes is not None and label >= n_classes):
            raise FormatError(f"{path}:{lineno}: agent/label out of range")
        xs, ys = shards.setdefault(agent, {"train": ([], []), "test": ([], [])})[split]
        xs.append(feats)
        ys.append(label)
    if not shards:
        raise FormatError(f"{path}: no data rows")
    n = max(shards) + 1
    if sorted(shards) != list(range(n)):
        raise FormatError(f"{path}: agents must be numbered 0..n-1")
    counts = {(len(s["train"][1]), len(s["test"][1])) for s in shards.values()}
    if len(counts) != 1:
        raise FormatError(f"{path}: agents have unequal train/test counts {sorted(counts)}")
    (m_train, m_test), = counts
    if m_train == 0:
        raise FormatError(f"{path}: agents have no training examples")

    def stack(split, k, dtype):
        return np.array([shards[i][split][k] for i in range(n)], dtype=dtype).reshape(n, -1, *((p,) if k == 0 else ()))

    y_train, y_test = stack("train", 1, np.int64), stack("test", 1, np.int64)
    if n_classes is None:
        n_classes = int(max(y_train.max(), y_test.max() if y_test.size else 0)) + 1
    return FLDataset(stack("train", 0, float), y_train, stack("test", 0, float), y_test, n_classes)

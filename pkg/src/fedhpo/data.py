"""Synthetic classification data and non-iid client partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class DataShard:
    features: np.ndarray
    labels: np.ndarray
    role: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (n, d) with one label per row")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, role=None) -> "DataShard":
        return DataShard(self.features[idx], self.labels[idx], role or self.role)


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 4000
    d_in: int = 16
    classes: int = 10
    cluster_spread: float = 1.0
    separation: float = 2.0
    seed: int = 0

    def validate(self, n_clients: int = 2):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.n_samples < n_clients * self.classes:
            raise ValueError(f"n_samples must be >= clients * classes ({n_clients * self.classes})")
        if self.cluster_spread < 0 or self.separation <= 0:
            raise ValueError("cluster_spread must be >= 0 and separation > 0")
        return self


def class_means(d_in: int, classes: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Vertices of a scaled simplex; random unit directions when ``classes > d_in``."""
    if classes <= d_in:
        means = np.zeros((classes, d_in))
        means[np.arange(classes), np.arange(classes)] = 1.0
    else:
        means = rng.standard_normal((classes, d_in))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    return separation * means


def generate(spec: SyntheticSpec) -> DataShard:
    """Class-conditional Gaussian clusters with uniform class priors."""
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec.d_in, spec.classes, spec.separation, rng)
    y = rng.integers(spec.classes, size=spec.n_samples)
    X = means[y] + spec.cluster_spread * rng.standard_normal((spec.n_samples, spec.d_in))
    return DataShard(X, y, "train")


def load_csv(path, label_column: str = "label") -> DataShard:
    """Read a CSV with a header row: numeric feature columns plus one integer label column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if label_column not in header:
            raise ValueError(f"{path}: no label column {label_column!r} in header {header}")
        li = header.index(label_column)
        X, y = [], []
        for row in reader:
            if not row:
                continue
            y.append(int(row[li]))
            X.append([float(v) for j, v in enumerate(row) if j != li])
    if not y:
        raise ValueError(f"{path}: no data rows")
    y = np.asarray(y)
    if y.min() < 0:
        raise ValueError(f"{path}: labels must be non-negative integers")
    return DataShard(np.asarray(X), y, "train")


def _largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    exact = proportions / proportions.sum() * total
    counts = np.floor(exact).astype(int)
    short = total - counts.sum()
    if short:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _repair_empty(parts: list[list[int]], min_size: int) -> list[list[int]]:
    for k in range(len(parts)):
        while len(parts[k]) < min_size:
            donor = max(range(len(parts)), key=lambda j: len(parts[j]))
            if len(parts[donor]) <= min_size:
                raise ValueError("not enough samples to give every client min_size samples")
            parts[k].append(parts[donor].pop())
    return parts


def partition_dirichlet(dataset: DataShard, n_clients: int, alpha: float, seed: int,
                        min_size: int = 1) -> list[DataShard]:
    """Label-skewed split: each class is spread over clients by a Dirichlet(alpha) draw."""
    if n_clients < 2:
        raise ValueError("need at least 2 clients")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in range(n_clients)]
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        rng.shuffle(idx)
        p = rng.dirichlet(np.full(n_clients, alpha))
        counts = _largest_remainder(len(idx), p)
        start = 0
        for k, n in enumerate(counts):
            parts[k].extend(idx[start : start + n].tolist())
            start += n
    parts = _repair_empty(parts, min_size)
    return [dataset.subset(np.sort(np.asarray(p, dtype=int))) for p in parts]


def partition_sizes(dataset: DataShard, fractions: Sequence[float], seed: int,
                    min_size: int = 1) -> list[DataShard]:
    """Size-skewed iid split with the given client fractions."""
    fr = np.asarray(fractions, dtype=float)
    if len(fr) < 2 or np.any(fr <= 0):
        raise ValueError("need >= 2 positive client fractions")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    counts = _largest_remainder(len(dataset), fr)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    parts = [order[bounds[k] : bounds[k + 1]].tolist() for k in range(len(fr))]
    parts = _repair_empty(parts, min_size)
    return [dataset.subset(np.sort(np.asarray(p, dtype=int))) for p in parts]


def split(shard: DataShard, fractions: Sequence[float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> tuple[DataShard, DataShard, DataShard]:
    """Seeded shuffle, then a disjoint train/val/test split."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be three positive numbers summing to 1")
    counts = _largest_remainder(len(shard), fr)
    if np.any(counts == 0):
        raise ValueError(f"split of {len(shard)} samples by {tuple(fr)} leaves an empty part")
    order = np.random.default_rng(seed).permutation(len(shard))
    b = np.cumsum(counts)
    return (
        shard.subset(order[: b[0]], "train"),
        shard.subset(order[b[0] : b[1]], "val"),
        shard.subset(order[b[1] :], "test"),
    )


def apply_domain_shift(shards: Sequence[DataShard], magnitude: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Draw one random offset of norm ``magnitude`` per client; returns the offsets."""
    if magnitude <= 0:
        return [np.zeros(s.features.shape[1]) for s in shards]
    offsets = []
    for s in shards:
        v = rng.standard_normal(s.features.shape[1])
        offsets.append(magnitude * v / np.linalg.norm(v))
    return offsets


def label_histogram(labels: np.ndarray, classes: int) -> np.ndarray:
    h = np.bincount(labels, minlength=classes).astype(float)
    return h / max(h.sum(), 1.0)


def mean_label_tv(shards: Sequence[DataShard], classes: int) -> float:
    """Mean total-variation distance between client and pooled label histograms."""
    pooled = label_histogram(np.concatenate([s.labels for s in shards]), classes)
    return float(np.mean([0.5 * np.abs(label_histogram(s.labels, classes) - pooled).sum() for s in shards]))

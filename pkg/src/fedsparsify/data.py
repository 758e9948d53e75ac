"""Synthetic regression datasets and heterogeneous federated partitions.

Partitions cover the four canonical environments: sample amounts are
Uniform (near-equal) or Skewed (geometric decay per learner), and label
distributions are IID (every learner spans the global label range) or
NonIID (every learner sees contiguous label-quantile chunks only).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AMOUNTS = ("uniform", "skewed")
DISTRIBUTIONS = ("iid", "noniid")


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, *feature_dims) float32
    labels: np.ndarray  # (n,) float32
    ids: np.ndarray  # (n,) int64, unique

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.float32).reshape(-1)
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if not (len(self.inputs) == len(self.labels) == len(self.ids)):
            raise ValueError("inputs, labels and ids must have equal lengths")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")
        if not np.all(np.isfinite(self.labels)):
            raise ValueError("labels must be finite")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, ids) -> "Dataset":
        rows = _rows_for_ids(self, np.asarray(ids, dtype=np.int64))
        return Dataset(self.inputs[rows], self.labels[rows], self.ids[rows])


def _rows_for_ids(dataset: Dataset, ids: np.ndarray) -> np.ndarray:
    order = np.argsort(dataset.ids, kind="stable")
    pos = np.searchsorted(dataset.ids, ids, sorter=order)
    if np.any(pos >= len(dataset)) or np.any(dataset.ids[order[pos.clip(max=len(dataset) - 1)]] != ids):
        raise KeyError("some requested ids are not in the dataset")
    return order[pos]


@dataclass(frozen=True)
class EnvironmentKind:
    """One of the four amount x distribution combinations."""

    amount: str = "uniform"
    distribution: str = "iid"
    skew_factor: float = 1.5
    noniid_chunks: int = 1

    def __post_init__(self):
        if self.amount not in AMOUNTS:
            raise ValueError(f"amount must be one of {AMOUNTS}, got {self.amount!r}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(
                f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}"
            )
        if self.amount == "skewed" and self.skew_factor <= 1.0:
            raise ValueError(f"skew_factor must be > 1, got {self.skew_factor}")
        if self.noniid_chunks < 1:
            raise ValueError(f"noniid_chunks must be >= 1, got {self.noniid_chunks}")

    @property
    def name(self) -> str:
        return f"{self.amount}-{self.distribution}"

    @classmethod
    def parse(cls, name: str, skew_factor: float = 1.5, noniid_chunks: int = 1):
        try:
            amount, distribution = name.strip().lower().split("-")
        except ValueError:
            raise ValueError(
                f"environment {name!r} is not of the form amount-distribution"
            ) from None
        return cls(amount, distribution, skew_factor, noniid_chunks)


@dataclass
class Partition:
    learner_id: int
    ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        # ascending id order makes the single-learner partition reproduce
        # the dataset order exactly
        self.ids = np.sort(np.asarray(self.ids, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.ids)


LABEL_FNS = ("smooth", "linear", "none")


def generate_synthetic(
    n_samples: int,
    feature_shape=(16,),
    label_fn: str = "smooth",
    noise: float = 1.0,
    seed: int = 0,
    id_offset: int = 0,
    label_offset: float = 62.0,
) -> Dataset:
    """Gaussian inputs with an age-like label around ``label_offset``.

    ``label_fn`` picks the deterministic part: "smooth" (two random
    projections through tanh and sine), "linear" (one projection), or
    "none" (constant; with noise > 0 the labels are pure noise, which is
    the memorization stress case). Seeded Gaussian noise is added on top.
    """
    if n_samples <= 0:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    if label_fn not in LABEL_FNS:
        raise ValueError(f"label_fn must be one of {LABEL_FNS}, got {label_fn!r}")
    rng = np.random.default_rng(seed)
    dim = int(np.prod(feature_shape))
    inputs = rng.standard_normal((n_samples, dim), dtype=np.float32)
    u1 = rng.standard_normal(dim) / math.sqrt(dim)
    u2 = rng.standard_normal(dim) / math.sqrt(dim)
    flat = inputs.astype(np.float64)
    if label_fn == "smooth":
        labels = label_offset + 8.0 * np.tanh(flat @ u1) + 4.0 * np.sin(3.0 * (flat @ u2))
    elif label_fn == "linear":
        labels = label_offset + 10.0 * (flat @ u1)
    else:
        labels = np.full(n_samples, label_offset)
    if noise > 0:
        labels = labels + noise * rng.standard_normal(n_samples)
    ids = np.arange(id_offset, id_offset + n_samples, dtype=np.int64)
    return Dataset(inputs.reshape((n_samples, *feature_shape)), labels, ids)


def _partition_sizes(n: int, env: EnvironmentKind, n_learners: int) -> list[int]:
    if env.amount == "uniform":
        base, rem = divmod(n, n_learners)
        return [base + (1 if k < rem else 0) for k in range(n_learners)]
    weights = np.array([env.skew_factor ** -k for k in range(n_learners)])
    raw = n * weights / weights.sum()
    sizes = np.floor(raw).astype(int)
    frac_order = np.argsort(-(raw - sizes), kind="stable")
    for k in frac_order[: n - sizes.sum()]:
        sizes[k] += 1
    if sizes.min() < 1:
        raise ValueError(
            f"dataset of {n} samples too small for skew_factor {env.skew_factor} "
            f"across {n_learners} learners"
        )
    return sizes.tolist()


def _spread_owners(sizes: list[int]) -> np.ndarray:
    """Owner per label-sorted rank, each learner spread evenly over the range."""
    keys, owners = [], []
    for k, size in enumerate(sizes):
        keys.append((np.arange(size) + 0.5) / size)
        owners.append(np.full(size, k))
    keys, owners = np.concatenate(keys), np.concatenate(owners)
    return owners[np.lexsort((owners, keys))]


def _chunked_owners(sizes: list[int], chunks: int) -> np.ndarray:
    """Owner per label-sorted rank; each learner holds `chunks` contiguous runs."""
    pieces = []
    for rep in range(chunks):
        for k, size in enumerate(sizes):
            part = size // chunks + (1 if rep < size % chunks else 0)
            pieces.append(np.full(part, k))
    return np.concatenate(pieces)


def partition(
    dataset: Dataset, env: EnvironmentKind, n_learners: int, seed: int = 0
) -> list[Partition]:
    """Split a dataset into per-learner partitions for one environment.

    Partitions are disjoint, cover the whole dataset, and are
    deterministic given (dataset, env, n_learners, seed).
    """
    n = len(dataset)
    if n_learners < 1:
        raise ValueError(f"need at least one learner, got {n_learners}")
    if n < n_learners:
        raise ValueError(f"cannot split {n} samples across {n_learners} learners")
    sizes = _partition_sizes(n, env, n_learners)

    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(n)
    by_label = shuffled[np.argsort(dataset.labels[shuffled], kind="stable")]

    if env.distribution == "iid":
        owners = _spread_owners(sizes)
    else:
        owners = _chunked_owners(sizes, env.noniid_chunks)
    return [
        Partition(k, dataset.ids[by_label[owners == k]]) for k in range(n_learners)
    ]


def load_csv(path) -> Dataset:
    """Tabular dataset: columns ``id``, ``label`` and either ``f*`` feature
    columns or a ``tensor`` column of per-sample ``.npy`` paths (relative
    to the CSV file)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise ValueError(f"{path}: need 'id' and 'label' columns")
        feature_cols = sorted(
            (c for c in reader.fieldnames if c.startswith("f") and c[1:].isdigit()),
            key=lambda c: int(c[1:]),
        )
        has_tensor = "tensor" in reader.fieldnames
        if not feature_cols and not has_tensor:
            raise ValueError(f"{path}: need f0..fk feature columns or a 'tensor' column")
        ids, labels, feats = [], [], []
        for row in reader:
            ids.append(int(row["id"]))
            labels.append(float(row["label"]))
            if has_tensor:
                feats.append(np.load(path.parent / row["tensor"]))
            else:
                feats.append([float(row[c]) for c in feature_cols])
    return Dataset(np.asarray(feats, dtype=np.float32), np.asarray(labels), np.asarray(ids))

"""Membership-inference audit for trained models.

White-box per-sample features (prediction, label, loss, and gradient
statistics of the last two parameterized layers) feed a regularized
logistic attack classifier. Reported accuracies always come from
class-balanced member/non-member sets, so 0.5 is chance. For federated
runs every learner plays attacker against every other learner, giving an
N*(N-1) accuracy matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset

GRAD_FEATURES_PER_LAYER = 64


def _param_layers(spec: nn.ModelSpec) -> list[tuple[int, int, int]]:
    """(layer_index, offset, size) of each parameterized layer, in order."""
    groups: dict[int, list] = {}
    for e in nn.param_entries(spec):
        groups.setdefault(e.layer_index, []).append(e)
    out = []
    for idx in sorted(groups):
        entries = groups[idx]
        offset = min(e.offset for e in entries)
        end = max(e.offset + e.size for e in entries)
        out.append((idx, offset, end - offset))
    return out


def feature_dim() -> int:
    return 3 + 2 * (2 + GRAD_FEATURES_PER_LAYER)


def extract_features(params: np.ndarray, spec: nn.ModelSpec, inputs, labels) -> np.ndarray:
    """One feature row per sample: prediction, label, loss, then L1/L2
    norms and the first 64 raw gradient entries of each of the last two
    parameterized layers."""
    layers = _param_layers(spec)
    if len(layers) < 2:
        raise ValueError(
            f"need at least two parameterized layers for gradient features, got {len(layers)}"
        )
    last_two = layers[-2:]
    labels = np.asarray(labels, dtype=np.float32).reshape(-1)
    rows = np.empty((len(labels), feature_dim()), dtype=np.float64)
    for i in range(len(labels)):
        batch = nn.Batch(inputs[i : i + 1], labels[i : i + 1])
        pred = nn.forward(params, spec, batch)[0]
        loss, grad = nn.backward(params, spec, batch)
        row = [float(pred), float(labels[i]), loss]
        for _, offset, size in last_two:
            g = grad[offset : offset + size]
            row.append(float(np.abs(g).sum()))
            row.append(float(np.sqrt(np.square(g).sum())))
            head = np.zeros(GRAD_FEATURES_PER_LAYER)
            head[: min(size, GRAD_FEATURES_PER_LAYER)] = g[:GRAD_FEATURES_PER_LAYER]
            row.extend(head.tolist())
        rows[i] = row
    return rows


@dataclass
class AttackDataset:
    features: np.ndarray  # (n, d)
    membership: np.ndarray  # (n,) bool; True = member

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.membership = np.asarray(self.membership, dtype=bool).reshape(-1)
        if len(self.features) != len(self.membership):
            raise ValueError("features and membership lengths differ")

    @property
    def is_balanced(self) -> bool:
        members = int(self.membership.sum())
        return members * 2 == len(self.membership)

    @classmethod
    def balanced(cls, member_features: np.ndarray, nonmember_features: np.ndarray):
        """Trim both classes to the smaller count (leading rows kept)."""
        m = min(len(member_features), len(nonmember_features))
        if m == 0:
            raise ValueError("both classes must be non-empty")
        feats = np.concatenate([member_features[:m], nonmember_features[:m]])
        labels = np.concatenate([np.ones(m, dtype=bool), np.zeros(m, dtype=bool)])
        return cls(feats, labels)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(t, -60.0, 60.0)))


@dataclass
class AttackModel:
    mean: np.ndarray
    std: np.ndarray
    weights: np.ndarray
    bias: float

    def scores(self, features: np.ndarray) -> np.ndarray:
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.std
        return _sigmoid(z @ self.weights + self.bias)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.scores(features) > 0.5


def train_attack(
    attack_train: AttackDataset,
    seed: int = 0,
    l2: float = 1e-3,
    lr: float = 0.5,
    iters: int = 400,
) -> AttackModel:
    """L2-regularized logistic classifier fit by full-batch gradient
    descent on standardized features; deterministic given the seed."""
    y = attack_train.membership.astype(np.float64)
    if y.min() == y.max():
        raise ValueError("attack training set must contain both classes")
    x = attack_train.features
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    z = (x - mean) / std
    rng = np.random.default_rng(seed)
    w = 1e-3 * rng.standard_normal(z.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iters):
        p = _sigmoid(z @ w + b)
        err = p - y
        w -= lr * (z.T @ err / n + 2.0 * l2 * w)
        b -= lr * float(err.mean())
    return AttackModel(mean, std, w, b)


def evaluate_attack(model: AttackModel, balanced_eval: AttackDataset) -> float:
    """Fraction of correct membership calls on a balanced set."""
    if not balanced_eval.is_balanced:
        members = int(balanced_eval.membership.sum())
        raise ValueError(
            f"evaluation set must be balanced, got {members} members / "
            f"{len(balanced_eval.membership) - members} non-members"
        )
    return float((model.predict(balanced_eval.features) == balanced_eval.membership).mean())


@dataclass
class AttackReport:
    mean_accuracy: float
    successful_attacks: int  # accuracy > 0.5
    matrix: np.ndarray  # (N, N), nan on the diagonal

    @property
    def num_attacks(self) -> int:
        n = self.matrix.shape[0]
        return n * (n - 1)

    def to_json_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "successful_attacks": self.successful_attacks,
            "num_attacks": self.num_attacks,
            "matrix": [
                [None if np.isnan(v) else v for v in row] for row in self.matrix.tolist()
            ],
        }


def federated_attack_matrix(
    learner_datasets: list[Dataset],
    spec: nn.ModelSpec,
    params: np.ndarray,
    unseen: Dataset,
    seed: int = 0,
) -> AttackReport:
    """Every learner attacks every other learner's membership in the final
    global model.

    The attacker trains on its own members vs half of the unseen pool and
    is scored on a balanced set of the victim's members vs the other half.
    """
    n = len(learner_datasets)
    if n < 2:
        raise ValueError(f"need at least two learners, got {n}")
    member_ids = np.concatenate([d.ids for d in learner_datasets])
    if len(np.intersect1d(member_ids, unseen.ids)):
        raise ValueError("unseen pool overlaps a training partition")

    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(len(unseen))
    half = len(unseen) // 2
    unseen_feats = extract_features(params, spec, unseen.inputs, unseen.labels)
    fit_pool = unseen_feats[perm[:half]]
    eval_pool = unseen_feats[perm[half:]]
    learner_feats = [
        extract_features(params, spec, d.inputs, d.labels) for d in learner_datasets
    ]

    matrix = np.full((n, n), np.nan)
    for a in range(n):
        model = train_attack(
            AttackDataset.balanced(learner_feats[a], fit_pool), seed=seed + a
        )
        for v in range(n):
            if v == a:
                continue
            eval_set = AttackDataset.balanced(learner_feats[v], eval_pool)
            matrix[a, v] = evaluate_attack(model, eval_set)
    accuracies = matrix[~np.isnan(matrix)]
    return AttackReport(
        mean_accuracy=float(accuracies.mean()),
        successful_attacks=int((accuracies > 0.5).sum()),
        matrix=matrix,
    )

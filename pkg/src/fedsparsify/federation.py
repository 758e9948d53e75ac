"""Star-topology federated training with optional progressive pruning.

Each round the controller broadcasts the global parameters and keep mask,
learners run masked local SGD on their partitions, the controller takes
the dataset-size-weighted average, prunes to the scheduled sparsity, and
zeroes the pruned coordinates. Without a schedule this is plain federated
averaging. A centralized trainer with optional one-shot pruning covers the
non-federated baseline, and a communication ledger counts every parameter
exchanged.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .data import Dataset, Partition
from .sparsify import PruneMask, SparsitySchedule, apply_mask, magnitude_mask, sparsity_at_round


class TrainingError(RuntimeError):
    """Local training failed; message carries round/learner context."""


@dataclass(frozen=True)
class FederationConfig:
    num_learners: int = 8
    rounds: int = 40
    local_epochs: int = 4
    lr: float = 1e-5
    batch_size: int = 1
    schedule: Optional[SparsitySchedule] = None
    seed: int = 0
    max_workers: int = 1

    def __post_init__(self):
        for name in ("num_learners", "rounds", "batch_size", "max_workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.local_epochs < 0:
            raise ValueError(f"local_epochs must be >= 0, got {self.local_epochs}")


@dataclass
class LearnerState:
    id: int
    dataset: Dataset
    local_params: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.dataset) == 0:
            raise ValueError(f"learner {self.id} has an empty dataset")


@dataclass
class GlobalModelState:
    round: int
    params: np.ndarray
    mask: PruneMask


@dataclass
class CommLedger:
    """Parameters exchanged per round: 2 * nonzero * learners (down + up)."""

    per_round: list[tuple[int, int]] = field(default_factory=list)
    cumulative: int = 0

    def record(self, round_index: int, nonzero_params: int, n_learners: int) -> int:
        exchanged = 2 * nonzero_params * n_learners
        self.per_round.append((round_index, exchanged))
        self.cumulative += exchanged
        return exchanged


@dataclass
class RoundMetrics:
    round: int
    target_sparsity: float
    actual_sparsity: float
    nonzero_params: int
    cumulative_comm_params: int
    train_loss: float
    val_mae: Optional[float] = None
    test_mae: Optional[float] = None
    wall_time_s: float = 0.0


METRICS_COLUMNS = (
    "round",
    "target_sparsity",
    "actual_sparsity",
    "nonzero_params",
    "cumulative_comm_params",
    "train_loss",
    "val_mae",
    "test_mae",
    "wall_time_s",
)


def write_metrics_csv(path, metrics: list[RoundMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for m in metrics:
            writer.writerow(
                [
                    m.round,
                    m.target_sparsity,
                    m.actual_sparsity,
                    m.nonzero_params,
                    m.cumulative_comm_params,
                    m.train_loss,
                    "" if m.val_mae is None else m.val_mae,
                    "" if m.test_mae is None else m.test_mae,
                    m.wall_time_s,
                ]
            )


def _sgd_epochs(
    params: np.ndarray,
    mask: PruneMask,
    spec: nn.ModelSpec,
    dataset: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    learner_id: int,
    epoch_base: int,
):
    """Masked minibatch SGD; batch order is a deterministic stream keyed by
    (seed, learner, absolute epoch index) so federated and centralized runs
    can share trajectories."""
    n = len(dataset)
    losses = []
    for e in range(epochs):
        rng = np.random.default_rng([seed, learner_id, epoch_base + e])
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            rows = order[lo : lo + batch_size]
            batch = nn.Batch(dataset.inputs[rows], dataset.labels[rows])
            loss, grad = nn.backward(params, spec, batch)
            params = nn.masked_sgd_step(params, grad, mask, lr)
            losses.append(loss)
    return params, (float(np.mean(losses)) if losses else math.nan)


def local_train(
    learner: LearnerState,
    global_state: GlobalModelState,
    spec: nn.ModelSpec,
    config: FederationConfig,
    round_index: int,
):
    """One learner's local update for a round, starting from the broadcast
    global parameters; returns (new params, mean step loss)."""
    epoch_base = (round_index - 1) * config.local_epochs
    try:
        params, mean_loss = _sgd_epochs(
            global_state.params,
            global_state.mask,
            spec,
            learner.dataset,
            config.local_epochs,
            config.lr,
            config.batch_size,
            config.seed,
            learner.id,
            epoch_base,
        )
    except nn.NumericsError as err:
        raise TrainingError(f"round {round_index}, learner {learner.id}: {err}") from err
    learner.local_params = params
    return params, mean_loss


def aggregate(local_updates: list[tuple[np.ndarray, int]]) -> np.ndarray:
    """Dataset-size-weighted mean, accumulated in learner-id order."""
    if not local_updates:
        raise ValueError("nothing to aggregate")
    length = len(local_updates[0][0])
    total = sum(size for _, size in local_updates)
    acc = np.zeros(length, dtype=np.float64)
    for params, size in local_updates:
        if len(params) != length:
            raise ValueError("parameter vectors have mismatched lengths")
        if size <= 0:
            raise ValueError(f"dataset sizes must be positive, got {size}")
        acc += (size / total) * params.astype(np.float64, copy=False)
    return acc.astype(np.float32)


@dataclass
class FederationResult:
    global_state: GlobalModelState
    ledger: CommLedger
    metrics: list[RoundMetrics]


def run_federation(
    config: FederationConfig,
    spec: nn.ModelSpec,
    train: Dataset,
    partitions: list[Partition],
    val: Optional[Dataset] = None,
    test: Optional[Dataset] = None,
    round_hook=None,
    protected: Optional[np.ndarray] = None,
) -> FederationResult:
    """Run the full federation; returns final state, ledger and per-round
    metrics. With ``config.schedule`` unset this is exactly federated
    averaging. ``round_hook(round, params, mask)`` is called after each
    round's prune step, for inspection."""
    if len(partitions) != config.num_learners:
        raise ValueError(
            f"got {len(partitions)} partitions for {config.num_learners} learners"
        )
    learners = [
        LearnerState(part.learner_id, train.subset(part.ids))
        for part in sorted(partitions, key=lambda p: p.learner_id)
    ]
    p = spec.param_count
    params = nn.build_model(spec, config.seed)
    mask = PruneMask.all_ones(p)
    ledger = CommLedger()
    metrics: list[RoundMetrics] = []

    for t in range(1, config.rounds + 1):
        t0 = time.perf_counter()
        state = GlobalModelState(t, params, mask)
        ledger.record(t, mask.nonzero_count, config.num_learners)

        if config.max_workers > 1:
            with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
                results = list(
                    pool.map(lambda k: local_train(k, state, spec, config, t), learners)
                )
        else:
            results = [local_train(k, state, spec, config, t) for k in learners]

        sizes = [len(k.dataset) for k in learners]
        params = aggregate([(r[0], s) for r, s in zip(results, sizes)])
        train_loss = float(np.average([r[1] for r in results], weights=sizes))

        target = 0.0
        if config.schedule is not None:
            target = sparsity_at_round(config.schedule, t)
            mask = magnitude_mask(params, target, mask, protected=protected)
            params = apply_mask(params, mask)
        if round_hook is not None:
            round_hook(t, params, mask)

        metrics.append(
            RoundMetrics(
                round=t,
                target_sparsity=target,
                actual_sparsity=1.0 - mask.nonzero_count / p,
                nonzero_params=mask.nonzero_count,
                cumulative_comm_params=ledger.cumulative,
                train_loss=train_loss,
                val_mae=None if val is None else nn.evaluate_mae(params, spec, val.inputs, val.labels),
                test_mae=None if test is None else nn.evaluate_mae(params, spec, test.inputs, test.labels),
                wall_time_s=time.perf_counter() - t0,
            )
        )
    return FederationResult(GlobalModelState(config.rounds, params, mask), ledger, metrics)


def simulate_comm_ledger(param_count: int, config: FederationConfig) -> CommLedger:
    """Ledger-only run: the exchanged-parameter counts of a federation
    without training a model (mask sizes follow the schedule exactly)."""
    ledger = CommLedger()
    cleared = 0
    for t in range(1, config.rounds + 1):
        ledger.record(t, param_count - cleared, config.num_learners)
        if config.schedule is not None:
            cleared = math.floor(param_count * sparsity_at_round(config.schedule, t))
    return ledger


@dataclass
class CentralizedResult:
    params: np.ndarray
    mask: PruneMask
    metrics: list[RoundMetrics]


def run_centralized(
    spec: nn.ModelSpec,
    train: Dataset,
    val: Optional[Dataset] = None,
    test: Optional[Dataset] = None,
    epochs: int = 100,
    lr: float = 1e-5,
    batch_size: int = 1,
    prune_at: Optional[int] = None,
    target_sparsity: float = 0.0,
    seed: int = 0,
    protected: Optional[np.ndarray] = None,
) -> CentralizedResult:
    """Plain SGD with an optional one-shot magnitude prune after
    ``prune_at`` epochs, then masked finetuning for the rest."""
    if prune_at is not None and not 0 < prune_at < epochs:
        raise ValueError(f"prune_at must be in (0, epochs), got {prune_at}")
    p = spec.param_count
    params = nn.build_model(spec, seed)
    mask = PruneMask.all_ones(p)
    metrics: list[RoundMetrics] = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        try:
            params, train_loss = _sgd_epochs(
                params, mask, spec, train, 1, lr, batch_size, seed, 0, epoch - 1
            )
        except nn.NumericsError as err:
            raise TrainingError(f"epoch {epoch}: {err}") from err
        target = 0.0
        if prune_at is not None and epoch == prune_at:
            target = target_sparsity
            mask = magnitude_mask(params, target_sparsity, mask, protected=protected)
            params = apply_mask(params, mask)
        metrics.append(
            RoundMetrics(
                round=epoch,
                target_sparsity=target,
                actual_sparsity=1.0 - mask.nonzero_count / p,
                nonzero_params=mask.nonzero_count,
                cumulative_comm_params=0,
                train_loss=train_loss,
                val_mae=None if val is None else nn.evaluate_mae(params, spec, val.inputs, val.labels),
                test_mae=None if test is None else nn.evaluate_mae(params, spec, test.inputs, test.labels),
                wall_time_s=time.perf_counter() - t0,
            )
        )
    return CentralizedResult(params, mask, metrics)

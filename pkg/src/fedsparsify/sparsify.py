"""Progressive sparsity schedule and magnitude-based pruning masks.

The schedule interpolates from an initial to a final sparsity with a
polynomial curve evaluated per federation round; masks clear the
smallest-magnitude weights globally and are monotone across rounds (a
pruned parameter never comes back).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SparsitySchedule:
    """Round-indexed sparsity target.

    At round ``t`` (1-based) the target is

        final + (initial - final) * (1 - (F*floor(t/F) - t0) / (T - t0))**n

    clamped to [initial, final], where ``T`` is ``total_rounds``, ``t0``
    is ``start_round``, ``F`` is ``frequency`` and ``n`` is ``exponent``.
    """

    initial_sparsity: float = 0.0
    final_sparsity: float = 0.95
    total_rounds: int = 40
    start_round: int = 1
    frequency: int = 1
    exponent: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.initial_sparsity <= self.final_sparsity <= 1.0:
            raise ValueError(
                "need 0 <= initial_sparsity <= final_sparsity <= 1, got "
                f"{self.initial_sparsity} and {self.final_sparsity}"
            )
        if self.total_rounds < 1:
            raise ValueError(f"total_rounds must be positive, got {self.total_rounds}")
        if not 1 <= self.start_round < self.total_rounds:
            raise ValueError(
                f"start_round must be in [1, total_rounds), got {self.start_round}"
            )
        if self.frequency < 1:
            raise ValueError(f"frequency must be positive, got {self.frequency}")
        if self.exponent <= 0:
            raise ValueError(f"exponent must be positive, got {self.exponent}")


def sparsity_at_round(sched: SparsitySchedule, t: int) -> float:
    """Target sparsity for round ``t`` (1-based); exactly final from round T on."""
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    if t >= sched.total_rounds:
        return sched.final_sparsity
    effective = sched.frequency * (t // sched.frequency)
    if effective <= sched.start_round:
        return sched.initial_sparsity
    progress = (effective - sched.start_round) / (sched.total_rounds - sched.start_round)
    s = sched.final_sparsity + (sched.initial_sparsity - sched.final_sparsity) * (
        1.0 - progress
    ) ** sched.exponent
    return min(max(s, sched.initial_sparsity), sched.final_sparsity)


class PruneMask:
    """Bit-per-parameter keep mask; bit 0 means pruned."""

    __slots__ = ("bits", "nonzero_count")

    def __init__(self, bits: np.ndarray):
        bits = np.ascontiguousarray(bits, dtype=bool)
        bits.setflags(write=False)  # masks are shared snapshots
        self.bits = bits
        self.nonzero_count = int(bits.sum())

    @classmethod
    def all_ones(cls, length: int) -> "PruneMask":
        return cls(np.ones(length, dtype=bool))

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def sparsity(self) -> float:
        return 1.0 - self.nonzero_count / len(self.bits)

    def __eq__(self, other) -> bool:
        return isinstance(other, PruneMask) and np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"PruneMask(P={len(self.bits)}, nonzero={self.nonzero_count})"


def magnitude_mask(
    params: np.ndarray,
    sparsity: float,
    prev_mask: PruneMask,
    protected: np.ndarray | None = None,
) -> PruneMask:
    """Prune the smallest-magnitude weights down to the requested sparsity.

    Exactly floor(P * sparsity) bits end up cleared; previously cleared
    bits stay cleared. Ranking is global over the whole vector, with ties
    broken toward the lower parameter index. ``protected`` marks indices
    that are never newly pruned (e.g. biases or norm parameters).
    """
    p = len(params)
    if len(prev_mask) != p:
        raise ValueError(f"mask length {len(prev_mask)} != param length {p}")
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    target_cleared = math.floor(p * sparsity)
    already_cleared = p - prev_mask.nonzero_count
    if target_cleared < already_cleared:
        raise ValueError(
            f"sparsity {sparsity} is below the mask's current "
            f"{already_cleared / p:.6f}; pruned parameters cannot be resurrected"
        )
    if target_cleared == already_cleared:
        return prev_mask
    candidates = prev_mask.bits
    if protected is not None:
        protected = np.asarray(protected, dtype=bool)
        if protected.shape != (p,):
            raise ValueError(f"protected must have shape ({p},)")
        candidates = candidates & ~protected
    kept = np.flatnonzero(candidates)
    extra = target_cleared - already_cleared
    if extra > len(kept):
        raise ValueError(
            f"cannot reach sparsity {sparsity}: only {len(kept)} prunable "
            f"parameters remain"
        )
    order = np.argsort(np.abs(params[kept]), kind="stable")
    bits = prev_mask.bits.copy()
    bits[kept[order[:extra]]] = False
    return PruneMask(bits)


def apply_mask(params: np.ndarray, mask: PruneMask) -> np.ndarray:
    """Zero out pruned coordinates; kept ones are untouched."""
    if len(mask) != len(params):
        raise ValueError(f"mask length {len(mask)} != param length {len(params)}")
    return np.where(mask.bits, params, params.dtype.type(0.0))

"""Reward-balanced continuation allocation over scored leaves.

Given leaves with verifier rewards and a continuation budget N, weights are
assigned sequentially from highest reward to lowest: each leaf receives the
ceiling of its share of the still-unallocated budget under a softmax (with
temperature) over the leaves not yet visited.  The ceiling favors early
(high-reward) leaves; once the budget is exhausted the remaining leaves get
zero.  The same procedure reallocates the budget over a retained subset
after pruning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class WeightAllocation:
    """Per-leaf continuation counts summing exactly to the budget."""

    entries: tuple[tuple[int, int], ...]  # (leaf id, weight), allocation order
    budget: int
    temperature: float

    def as_dict(self) -> dict[int, int]:
        return dict(self.entries)

    def weight_of(self, leaf_id: int) -> int:
        return self.as_dict().get(leaf_id, 0)

    def positive_ids(self) -> list[int]:
        return sorted(i for i, w in self.entries if w > 0)


def _cascade(leaves, budget: int, temperature: float) -> WeightAllocation:
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if not leaves:
        raise ValueError("cannot allocate over zero leaves")
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")

    # reward descending, ties by ascending id
    order = sorted(leaves, key=lambda lr: (-lr[1], lr[0]))
    max_r = order[0][1]
    masses = [math.exp((r - max_r) / temperature) for _, r in order]
    # suffix sums so the final leaf sees exactly its own mass
    suffix = [0.0] * (len(masses) + 1)
    for i in range(len(masses) - 1, -1, -1):
        suffix[i] = suffix[i + 1] + masses[i]

    remaining = budget
    entries = []
    for i, (leaf_id, _) in enumerate(order):
        if remaining <= 0 or suffix[i] <= 0.0:
            w = 0
        else:
            w = math.ceil((remaining * masses[i]) / suffix[i])
            w = min(w, remaining)  # ceil may overshoot the leftover budget
        remaining -= w
        entries.append((leaf_id, w))
    return WeightAllocation(entries=tuple(entries), budget=budget, temperature=temperature)


def allocate(leaves, budget: int, temperature: float) -> WeightAllocation:
    """Allocate ``budget`` continuations over ``leaves`` = [(id, reward), ...]."""
    return _cascade(leaves, budget, temperature)


def reallocate(retained, budget: int, temperature: float) -> WeightAllocation:
    """Re-run the allocation over the post-prune leaf set."""
    return _cascade(retained, budget, temperature)

"""
Numeric helpers shared by the allocation and selection services
"""

import math
from typing import Iterable, List, Sequence

import numpy as np


def largest_remainder(shares: Sequence[float], total: int) -> List[int]:
    """
    Integerize non-negative shares so they sum to ``total``

    Each entry first receives the floor of its share; the remaining units go to the
    largest fractional parts, ties broken by lowest index.

    Args:
        shares: Non-negative real shares (need not sum to ``total``; they are rescaled)
        total: Target integer sum

    Returns:
        List of integers summing to ``total``
    """
    values = np.asarray(shares, dtype=float)
    if values.size == 0:
        return []
    weight = stable_sum(values)
    if weight <= 0:
        raise ValueError("shares must have a positive sum")
    scaled = values * (total / weight)
    floors = np.floor(scaled).astype(int)
    remainder = int(total - floors.sum())
    fractions = scaled - floors
    # stable sort on negated fractions keeps the lowest index first among ties
    order = np.argsort(-np.round(fractions, 12), kind="stable")
    for idx in order[:remainder]:
        floors[idx] += 1
    return [int(v) for v in floors]


def stable_sum(values: Iterable[float]) -> float:
    """Compensated summation (deterministic for a fixed input order)"""
    return math.fsum(float(v) for v in values)

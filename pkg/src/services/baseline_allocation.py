"""
Closed-form baseline allocations for a fixed total sample size

Uniform, proportional, Neyman (Tschuprow-Neyman) and cost-constrained Neyman
allocations. All results are integerized with the largest-remainder rule, ties going
to the lowest stratum index.
"""

from typing import List, Sequence

import numpy as np

from schemas.errors import InfeasibleError
from schemas.records import StratumInfo
from utils.logger import get_logger
from utils.numeric import largest_remainder, stable_sum

logger = get_logger(__name__)


def _check_total(n: int, strata: Sequence[StratumInfo]) -> None:
    if not strata:
        raise InfeasibleError("no strata to allocate")
    if n < len(strata):
        raise InfeasibleError(f"total sample size {n} is smaller than the number of strata {len(strata)}")


def alloc_uniform(n: int, strata: Sequence[StratumInfo]) -> List[int]:
    """Equal number of units in every stratum (n_h = n / L)"""
    _check_total(n, strata)
    return largest_remainder([1.0] * len(strata), n)


def alloc_proportional(n: int, strata: Sequence[StratumInfo]) -> List[int]:
    """Units proportional to the stratum population (n_h = n N_h / N)"""
    _check_total(n, strata)
    return largest_remainder([float(s.N) for s in strata], n)


def alloc_neyman(n: int, strata: Sequence[StratumInfo], variable: int) -> List[int]:
    """
    Neyman allocation for one target variable (n_h proportional to N_h S_h)

    Args:
        n: Total sample size
        strata: Strata with population sizes and standard deviations
        variable: Zero-based index of the target variable

    Returns:
        Integer allocation summing to n; proportional allocation when every S_h is zero
    """
    _check_total(n, strata)
    weights = np.array([s.N * s.stdevs[variable] for s in strata], dtype=float)
    if not np.any(weights > 0):
        logger.warning(
            "All standard deviations are zero; falling back to proportional allocation",
            extra={"extra_data": {"variable": variable}},
        )
        return alloc_proportional(n, strata)
    return largest_remainder(weights, n)


def alloc_neyman_cost(budget: float, fixed_cost: float, strata: Sequence[StratumInfo], variable: int) -> List[int]:
    """
    Neyman allocation under a budget C = c0 + sum(n_h c_h)

    n_h = (C - c0) * (W_h S_h / sqrt(c_h)) / sum(W_h S_h sqrt(c_h)), with W_h = N_h / N.
    The continuous solution is integerized by largest remainder to its rounded total.

    Args:
        budget: Global budget C
        fixed_cost: Fixed cost c0
        strata: Strata with costs
        variable: Zero-based index of the target variable

    Returns:
        Integer allocation
    """
    if budget <= fixed_cost:
        raise InfeasibleError(f"budget {budget} does not exceed the fixed cost {fixed_cost}")
    if not strata:
        raise InfeasibleError("no strata to allocate")
    costs = np.array([s.cost for s in strata], dtype=float)
    if np.any(costs <= 0):
        raise InfeasibleError("unit costs must be positive")

    total_n = float(sum(s.N for s in strata))
    share = np.array([s.N / total_n * s.stdevs[variable] for s in strata], dtype=float)
    if not np.any(share > 0):
        logger.warning(
            "All standard deviations are zero; using population shares in the budget allocation",
            extra={"extra_data": {"variable": variable}},
        )
        share = np.array([s.N / total_n for s in strata], dtype=float)

    raw = (budget - fixed_cost) * (share / np.sqrt(costs)) / float(np.sum(share * np.sqrt(costs)))
    total = int(round(stable_sum(raw)))
    if total < 1:
        raise InfeasibleError(f"budget {budget} buys less than one unit")
    return largest_remainder(raw, total)

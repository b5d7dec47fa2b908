"""
Sampford sampling: fixed size, without replacement, inclusion probabilities
proportional to size
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from config.settings import get_settings
from schemas.errors import ConvergenceError, InfeasibleError
from utils.logger import get_logger
from utils.random_streams import SeedLike, as_rng

logger = get_logger(__name__)

INITIAL_BATCH = 32
MAX_BATCH = 1 << 16


@dataclass
class SampfordDraw:
    """Selected positions (ascending) and the inclusion probabilities of every unit"""

    selected: np.ndarray
    pik: np.ndarray
    attempts: int


def inclusion_probabilities(sizes: Sequence[float], m: int) -> np.ndarray:
    """pi_l = m * M_l / sum(M)"""
    sizes = np.asarray(sizes, dtype=float)
    total = sizes.sum()
    if total <= 0:
        raise InfeasibleError("measures of size must have a positive total")
    return m * sizes / total


def sampford_select(
    sizes: Sequence[float],
    m: int,
    seed: SeedLike,
    max_attempts: Optional[int] = None,
) -> SampfordDraw:
    """
    Draw m distinct units with Sampford's rejective procedure

    One draw with probabilities pi/m and m - 1 draws with probabilities proportional to
    pi/(1 - pi), all with replacement; the first all-distinct draw is accepted.
    Candidate draws are generated in batches of growing size.

    Args:
        sizes: Measures of size of the units
        m: Sample size
        seed: Seed or generator
        max_attempts: Rejection cap (default from settings, 1e7)

    Returns:
        SampfordDraw
    """
    sizes = np.asarray(sizes, dtype=float)
    count = sizes.size
    if m < 1:
        raise InfeasibleError(f"Sampford sample size must be positive, got {m}")
    if m >= count:
        raise InfeasibleError(f"Sampford needs fewer draws ({m}) than units ({count})")
    pik = inclusion_probabilities(sizes, m)
    if np.any(pik >= 1.0):
        raise InfeasibleError("inclusion probabilities must be below 1; promote large units first")

    rng = as_rng(seed)
    cap = get_settings().sampford_max_attempts if max_attempts is None else max_attempts
    first_p = pik / m
    if m == 1:
        return SampfordDraw(selected=np.array([rng.choice(count, p=first_p)]), pik=pik, attempts=1)

    odds = pik / (1.0 - pik)
    later_p = odds / odds.sum()

    attempts = 0
    batch = INITIAL_BATCH
    while attempts < cap:
        size = min(batch, cap - attempts)
        first = rng.choice(count, size=(size, 1), p=first_p)
        rest = rng.choice(count, size=(size, m - 1), p=later_p)
        draws = np.sort(np.hstack([first, rest]), axis=1)
        distinct = np.all(np.diff(draws, axis=1) != 0, axis=1)
        hits = np.flatnonzero(distinct)
        if hits.size:
            attempts += int(hits[0]) + 1
            return SampfordDraw(selected=draws[hits[0]], pik=pik, attempts=attempts)
        attempts += size
        batch = min(batch * 2, MAX_BATCH)

    logger.error(
        "Sampford rejection loop exhausted",
        extra={"extra_data": {"units": count, "m": m, "attempts": attempts}},
    )
    raise ConvergenceError(f"Sampford selection found no distinct sample in {attempts} attempts")

"""
Sub-strata for PSU selection

Self-representing PSUs (measure of size above the threshold) each form their own
sub-stratum. The others are sorted by decreasing measure of size and grouped greedily.
With the NSR PSU count of a two-stage allocation, the groups are cut so that exactly that
many PSUs are drawn. Without it, sub-strata are about threshold * m in size with m PSUs
drawn in each.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from schemas.errors import InfeasibleError
from schemas.records import PsuRecord
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class SubStratum:
    """Group of PSUs from which a fixed number is drawn"""

    stratum_id: str
    sub_id: str
    psu_ids: Tuple[str, ...]
    sizes: Tuple[int, ...]
    n_psu_to_select: int
    is_sr: bool

    @property
    def size_total(self) -> int:
        return int(sum(self.sizes))

    @property
    def pik(self) -> np.ndarray:
        """First-stage inclusion probabilities n_psu_to_select * M_l / size_total"""
        if self.is_sr:
            return np.ones(len(self.psu_ids))
        return self.n_psu_to_select * np.asarray(self.sizes, dtype=float) / self.size_total


def _promote(members: Sequence[PsuRecord], n_draw: int) -> Tuple[List[PsuRecord], List[PsuRecord], int]:
    """
    Split off PSUs whose inclusion probability would reach 1

    Each promoted PSU uses up one draw, so promoted plus draws left equals n_draw
    whenever the members outnumber the draws.
    """
    promoted: List[PsuRecord] = []
    remaining = list(members)
    left = n_draw
    while remaining:
        if len(remaining) <= left:
            promoted.extend(remaining)
            return promoted, [], 0
        total = sum(p.mos for p in remaining)
        large = {p.psu_id for p in remaining if left * p.mos >= total}
        if not large:
            break
        promoted.extend(p for p in remaining if p.psu_id in large)
        remaining = [p for p in remaining if p.psu_id not in large]
        left -= len(large)
    return promoted, remaining, left


def _threshold_groups(nsr: Sequence[PsuRecord], threshold: float, m: int) -> Tuple[List[List[PsuRecord]], List[int]]:
    """Groups closed when their running size reaches threshold * m; the remainder draws pro rata"""
    target = threshold * m
    groups: List[List[PsuRecord]] = []
    current: List[PsuRecord] = []
    running = 0
    for psu in nsr:
        current.append(psu)
        running += psu.mos
        if target > 0 and running >= target:
            groups.append(current)
            current, running = [], 0
    draws = [m] * len(groups)
    if current:
        size = sum(p.mos for p in current)
        share = round(m * size / target) if target > 0 else m
        draws.append(min(max(1, int(share)), len(current)))
        groups.append(current)
    return groups, draws


def _allocated_groups(
    nsr: Sequence[PsuRecord], n_psu_nsr: int, m: int
) -> Tuple[List[PsuRecord], List[List[PsuRecord]], List[int]]:
    """
    Certainty PSUs plus groups whose draws add up to n_psu_nsr

    Each remaining PSU expects r * M / total draws. A group closes once its expected
    draws reach its quota, or early when the PSUs left just cover the later quotas.
    """
    n_draws = min(max(1, n_psu_nsr), len(nsr))
    certain, kept, r = _promote(nsr, n_draws)
    if not kept:
        return certain, [], []

    total = float(sum(p.mos for p in kept))
    expected = [r * p.mos / total for p in kept]
    n_groups = max(1, r // m)
    base, extra = divmod(r, n_groups)
    draws = [base + 1 if k < extra else base for k in range(n_groups)]

    groups: List[List[PsuRecord]] = []
    idx = 0
    for k in range(n_groups - 1):
        later = sum(draws[k + 1 :])
        current: List[PsuRecord] = []
        running = 0.0
        while len(kept) - idx > later:
            current.append(kept[idx])
            running += expected[idx]
            idx += 1
            if running >= draws[k] - 1e-9:
                break
        groups.append(current)
    groups.append(list(kept[idx:]))
    return certain, groups, draws


def build_substrata(
    stratum_id: str,
    psus: Sequence[PsuRecord],
    threshold: float,
    psus_per_substratum: int = 2,
    n_psu_nsr: Optional[int] = None,
) -> List[SubStratum]:
    """
    Partition one stratum's PSUs into sub-strata

    Args:
        stratum_id: Stratum label (sub-strata are named "<stratum>-<k>")
        psus: PSUs of the stratum
        threshold: Self-representing threshold of the stratum
        psus_per_substratum: PSUs drawn per NSR sub-stratum (m)
        n_psu_nsr: NSR PSUs planned by the allocation; when given, exactly that many
            of the PSUs under the threshold are selected (capped at those available)

    Returns:
        SR singleton sub-strata first, then NSR sub-strata in decreasing size order
    """
    m = psus_per_substratum
    if m < 1:
        raise InfeasibleError("at least one PSU must be drawn per sub-stratum")
    if threshold > 0:
        sr = sorted((p for p in psus if p.mos > threshold), key=lambda p: (-p.mos, p.psu_id))
        nsr = sorted((p for p in psus if p.mos <= threshold), key=lambda p: (-p.mos, p.psu_id))
    else:
        sr, nsr = [], sorted(psus, key=lambda p: (-p.mos, p.psu_id))

    singles = list(sr)
    groups: List[List[PsuRecord]] = []
    draws: List[int] = []
    if nsr and n_psu_nsr is None:
        groups, draws = _threshold_groups(nsr, threshold, m)
    elif nsr:
        certain, groups, draws = _allocated_groups(nsr, n_psu_nsr, m)
        singles.extend(certain)

    nsr_groups: List[Tuple[List[PsuRecord], int]] = []
    for members, n_draw in zip(groups, draws):
        promoted, kept, left = _promote(members, n_draw)
        singles.extend(promoted)
        if kept:
            nsr_groups.append((kept, left))

    promoted_count = len(singles) - len(sr)
    if promoted_count:
        logger.info(
            f"Stratum {stratum_id}: {promoted_count} PSU(s) under the threshold taken with certainty",
            extra={"extra_data": {"stratum": stratum_id, "psus": [p.psu_id for p in singles[len(sr) :]]}},
        )

    substrata: List[SubStratum] = []
    for psu in singles:
        substrata.append(
            SubStratum(stratum_id, f"{stratum_id}-{len(substrata) + 1}", (psu.psu_id,), (psu.mos,), 1, True)
        )
    for members, n_draw in nsr_groups:
        substrata.append(
            SubStratum(
                stratum_id,
                f"{stratum_id}-{len(substrata) + 1}",
                tuple(p.psu_id for p in members),
                tuple(p.mos for p in members),
                n_draw,
                False,
            )
        )
    return substrata

"""
First-stage selection

For every stratum of a two-stage allocation the PSUs are grouped into sub-strata,
self-representing PSUs are taken with certainty and Sampford samples are drawn in the
remaining sub-strata. Each selected PSU receives its SSU quota.
"""

import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import get_settings
from schemas.errors import DanglingReferenceError, InfeasibleError
from schemas.records import AllocationResult, DesignParams, PsuRecord
from services.sampford import sampford_select
from services.substrata import SubStratum, build_substrata
from utils.logger import get_logger, log_performance
from utils.numeric import largest_remainder
from utils.random_streams import derive_rng

logger = get_logger(__name__)

SAMPLE_COLUMNS = [
    "PSU_ID",
    "STRATUM",
    "stratum",
    "SR",
    "PSU_MOS",
    "PSU_final_sample_unit",
    "Pik",
    "weight_1st",
    "weight_2st",
    "weight",
]
STATS_COLUMNS = ["STRATUM", "PSU", "PSU_SR", "PSU_NSR", "SSU"]


@dataclass
class SelectedPsu:
    """A PSU in the first-stage sample"""

    psu_id: str
    stratum_id: str
    sub_id: str
    sr_flag: bool
    mos: int
    pik: float
    ssu_to_select: int

    @property
    def weight_1st(self) -> float:
        return 1.0 / self.pik


@dataclass
class StratumPlan:
    """Sub-strata of one stratum with the SSU budget they share"""

    stratum_id: str
    n_ssu: int
    minimum: int
    sampling_fraction: float
    substrata: List[SubStratum]
    quotas: Dict[str, int]


@dataclass
class PsuSelection:
    """Universe, sample and per-stratum summary of a first-stage draw"""

    universe: pd.DataFrame
    sample: pd.DataFrame
    stats: pd.DataFrame
    selected: List[SelectedPsu]


def substratum_quotas(substrata: Sequence[SubStratum], n_ssu: int, fraction: float) -> Dict[str, int]:
    """SSUs per sub-stratum: largest remainder on fraction * size, summing to n_ssu"""
    if not substrata:
        return {}
    shares = [fraction * s.size_total for s in substrata]
    if sum(shares) <= 0:
        shares = [1.0] * len(substrata)
    totals = largest_remainder(shares, n_ssu)
    return {s.sub_id: t for s, t in zip(substrata, totals)}


def plan_psu_selection(
    strata_ids: Sequence[str],
    n_ssu: Sequence[int],
    thresholds: Sequence[float],
    psus: Sequence[PsuRecord],
    design: Sequence[DesignParams],
    psus_per_substratum: Optional[int] = None,
    n_psu_nsr: Optional[Sequence[int]] = None,
) -> List[StratumPlan]:
    """
    Sub-strata and SSU budgets for every stratum of a two-stage allocation

    Args:
        strata_ids: Strata in allocation order
        n_ssu: SSUs allocated per stratum
        thresholds: Self-representing threshold per stratum
        psus: PSU list
        design: Design parameters (MINIMUM per stratum)
        psus_per_substratum: PSUs drawn per NSR sub-stratum (default minPSUstrat)
        n_psu_nsr: NSR PSUs per stratum from the allocation; without it the number drawn
            follows from the threshold alone

    Returns:
        One StratumPlan per stratum, in allocation order
    """
    m = get_settings().min_psu_strat if psus_per_substratum is None else psus_per_substratum

    by_stratum: Dict[str, List[PsuRecord]] = {sid: [] for sid in strata_ids}
    for psu in psus:
        if psu.stratum_id not in by_stratum:
            raise DanglingReferenceError(f"PSU {psu.psu_id!r} refers to unknown stratum {psu.stratum_id!r}")
        by_stratum[psu.stratum_id].append(psu)
    minimum = {d.stratum_id: d.minimum for d in design}

    if n_psu_nsr is not None and len(n_psu_nsr) != len(strata_ids):
        raise InfeasibleError(f"{len(n_psu_nsr)} NSR PSU counts for {len(strata_ids)} strata")

    plans = []
    for h, (sid, n_h, threshold) in enumerate(zip(strata_ids, n_ssu, thresholds)):
        members = by_stratum[sid]
        if not members:
            raise DanglingReferenceError(f"stratum {sid!r} has no PSUs")
        if sid not in minimum:
            raise DanglingReferenceError(f"des: no row for stratum {sid!r}")
        if n_h <= 0:
            raise InfeasibleError(f"stratum {sid!r} has no SSUs allocated but PSUs must be selected")
        N_h = sum(p.mos for p in members)
        fraction = float(n_h) / N_h
        planned = None if n_psu_nsr is None else int(n_psu_nsr[h])
        substrata = build_substrata(sid, members, float(threshold), m, planned)
        plans.append(
            StratumPlan(
                stratum_id=sid,
                n_ssu=int(n_h),
                minimum=minimum[sid],
                sampling_fraction=fraction,
                substrata=substrata,
                quotas=substratum_quotas(substrata, int(n_h), fraction),
            )
        )
    return plans


def _split_quota(total: int, n_selected: int) -> List[int]:
    base, extra = divmod(total, n_selected)
    return [base + 1 if i < extra else base for i in range(n_selected)]


def draw_psu_sample(plans: Sequence[StratumPlan], seed: int) -> List[SelectedPsu]:
    """
    Select PSUs from every sub-stratum

    Sub-stratum draws use the stream derived from (seed, "psu", sub-stratum id).
    Quotas below the stratum minimum are raised to it.
    """
    selected: List[SelectedPsu] = []
    raised = 0
    for plan in plans:
        for sub in plan.substrata:
            pik = sub.pik
            if sub.is_sr or sub.n_psu_to_select >= len(sub.psu_ids):
                chosen = np.arange(len(sub.psu_ids))
                pik = np.ones(len(sub.psu_ids)) if sub.is_sr else pik
            else:
                draw = sampford_select(sub.sizes, sub.n_psu_to_select, derive_rng(seed, "psu", sub.sub_id))
                chosen = draw.selected
            quotas = _split_quota(plan.quotas[sub.sub_id], len(chosen))
            for idx, quota in zip(chosen, quotas):
                if quota < plan.minimum:
                    raised += 1
                selected.append(
                    SelectedPsu(
                        psu_id=sub.psu_ids[idx],
                        stratum_id=plan.stratum_id,
                        sub_id=sub.sub_id,
                        sr_flag=sub.is_sr,
                        mos=sub.sizes[idx],
                        pik=float(min(pik[idx], 1.0)),
                        ssu_to_select=max(plan.minimum, quota),
                    )
                )
    if raised:
        logger.info(
            f"{raised} PSU quota(s) raised to the stratum minimum",
            extra={"extra_data": {"raised": raised}},
        )
    return selected


def universe_table(plans: Sequence[StratumPlan]) -> pd.DataFrame:
    """Every PSU with its sub-stratum, SR flag and target inclusion probability"""
    rows = []
    for plan in plans:
        for sub in plan.substrata:
            for psu_id, mos, pik in zip(sub.psu_ids, sub.sizes, sub.pik):
                rows.append(
                    {
                        "PSU_ID": psu_id,
                        "STRATUM": plan.stratum_id,
                        "stratum": sub.sub_id,
                        "PSU_MOS": mos,
                        "SR": int(sub.is_sr),
                        "nSR": int(not sub.is_sr),
                        "PSU_to_select": sub.n_psu_to_select,
                        "Pik": float(pik),
                    }
                )
    return pd.DataFrame(rows)


def sample_table(selected: Sequence[SelectedPsu]) -> pd.DataFrame:
    """sample_PSU layout; weight_2st is the planned M / quota"""
    rows = []
    for psu in selected:
        weight_2nd = psu.mos / psu.ssu_to_select
        rows.append(
            {
                "PSU_ID": psu.psu_id,
                "STRATUM": psu.stratum_id,
                "stratum": psu.sub_id,
                "SR": int(psu.sr_flag),
                "PSU_MOS": psu.mos,
                "PSU_final_sample_unit": psu.ssu_to_select,
                "Pik": psu.pik,
                "weight_1st": psu.weight_1st,
                "weight_2st": weight_2nd,
                "weight": psu.weight_1st * weight_2nd,
            }
        )
    return pd.DataFrame(rows, columns=SAMPLE_COLUMNS)


def stats_table(selected: Sequence[SelectedPsu], strata_ids: Sequence[str]) -> pd.DataFrame:
    """Selected PSUs and SSUs per stratum plus a Total row"""
    rows = []
    for sid in strata_ids:
        members = [p for p in selected if p.stratum_id == sid]
        sr = sum(1 for p in members if p.sr_flag)
        rows.append(
            {
                "STRATUM": sid,
                "PSU": len(members),
                "PSU_SR": sr,
                "PSU_NSR": len(members) - sr,
                "SSU": sum(p.ssu_to_select for p in members),
            }
        )
    table = pd.DataFrame(rows, columns=STATS_COLUMNS)
    total = {"STRATUM": "Total", **{c: int(table[c].sum()) for c in STATS_COLUMNS[1:]}}
    return pd.concat([table, pd.DataFrame([total])], ignore_index=True)


def select_psu(
    alloc: AllocationResult,
    psus: Sequence[PsuRecord],
    design: Sequence[DesignParams],
    seed: int,
    psus_per_substratum: Optional[int] = None,
) -> PsuSelection:
    """
    Select the first-stage sample of a two-stage allocation

    Args:
        alloc: Two-stage allocation result
        psus: PSU list
        design: Design parameters
        seed: Master seed
        psus_per_substratum: PSUs drawn per NSR sub-stratum

    Returns:
        PsuSelection with universe_PSU, sample_PSU and PSU_stats tables
    """
    if alloc.threshold is None:
        raise InfeasibleError("PSU selection needs a two-stage allocation with thresholds")
    plans = plan_psu_selection(
        alloc.strata_ids, alloc.n, alloc.threshold, psus, design, psus_per_substratum, n_psu_nsr=alloc.psu_nsr
    )
    return select_from_plans(plans, seed)


def select_from_plans(plans: Sequence[StratumPlan], seed: int) -> PsuSelection:
    """Draw the first-stage sample for prepared stratum plans"""
    start = time.time()
    selected = draw_psu_sample(plans, seed)
    selection = PsuSelection(
        universe=universe_table(plans),
        sample=sample_table(selected),
        stats=stats_table(selected, [p.stratum_id for p in plans]),
        selected=selected,
    )
    log_performance(
        logger,
        "select_psu",
        time.time() - start,
        psus=len(selected),
        ssus=int(selection.stats["SSU"].iloc[-1]),
    )
    return selection

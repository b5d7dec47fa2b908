"""
Two-stage allocation of PSUs and SSUs

The SSU allocation is solved with standard deviations inflated by deft * sqrt(effst);
from that allocation the self-representing threshold, the SR/NSR split, the PSU
counts and the design effects are recomputed, and the solve is repeated until the SSU
total or the deft values settle.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import get_settings
from data.validation import DomainCell, validate_domains
from schemas.errors import DanglingReferenceError, InfeasibleError, SchemaError
from schemas.records import (
    AllocationResult,
    DesignParams,
    FactorRecord,
    PrecisionConstraint,
    PsuRecord,
    RhoRecord,
    StratumInfo,
)
from schemas.tables import factor_matrix
from services.bethel import cv_matrix, cv_table, planned_cv
from services.design_effect import compute_threshold, deff_extended, split_sr_nsr
from services.one_stage import ITERATION_COLUMNS, SolvedAllocation, allocation_table, sensitivity_10pct, solve_allocation
from utils.logger import LoggerMixin, get_logger, log_performance

logger = get_logger(__name__)


@dataclass(frozen=True)
class StopRule:
    """Termination thresholds of the two-stage loop"""

    max_ssu_diff: float = 5.0
    max_deft_diff: float = 0.06
    max_iters: int = 20

    def __post_init__(self):
        if self.max_ssu_diff <= 0 or self.max_deft_diff <= 0 or self.max_iters < 1:
            raise SchemaError("stop rule thresholds must be positive")

    @classmethod
    def from_settings(cls) -> "StopRule":
        settings = get_settings()
        return cls(
            max_ssu_diff=settings.max_ssu_diff,
            max_deft_diff=settings.max_deft_diff,
            max_iters=settings.max_twostage_iters,
        )


@dataclass
class StratumPsuDesign:
    """SR/NSR structure of one stratum for a given SSU allocation"""

    threshold: float
    psu_sr: int
    psu_nsr: int
    N_sr: float
    N_nsr: float
    n_sr: float
    n_nsr: float
    b_sr: float
    b_nsr: float
    deff: np.ndarray


@dataclass
class TwoStageState:
    """One iterate of the two-stage loop"""

    iter: int
    n: np.ndarray
    threshold: np.ndarray
    deft: np.ndarray
    psu_sr: np.ndarray
    psu_nsr: np.ndarray
    b_sr: np.ndarray
    b_nsr: np.ndarray
    solved: Optional[SolvedAllocation] = field(default=None, repr=False)

    @property
    def total_ssu(self) -> int:
        return int(np.sum(self.n))

    @property
    def total_psu(self) -> int:
        return int(np.sum(self.psu_sr) + np.sum(self.psu_nsr))


def stratum_psu_design(
    n_h: float,
    N_h: float,
    psus: Sequence[PsuRecord],
    design: DesignParams,
    rho: RhoRecord,
    min_psu_strat: int,
) -> StratumPsuDesign:
    """
    Threshold, SR/NSR PSU counts and deff of one stratum for allocation n_h

    NSR PSUs needed are max(min_psu_strat, ceil(n_nsr / minimum)), capped at the NSR PSUs
    available. Inside an SR PSU the cluster is the SSU itself, so its take is delta.
    """
    f = n_h / N_h
    threshold = compute_threshold(design.minimum, design.delta, f)
    sr, nsr = split_sr_nsr(psus, threshold)

    N_sr = float(sum(p.mos for p in sr))
    N_nsr = max(float(N_h) - N_sr, 0.0)
    n_sr = n_h * N_sr / N_h
    n_nsr = n_h - n_sr

    if nsr and n_nsr > 0:
        psu_nsr = max(min_psu_strat, math.ceil(n_nsr / design.minimum - 1e-9))
        psu_nsr = min(psu_nsr, len(nsr))
        b_nsr = max(1.0, n_nsr / psu_nsr)
    else:
        psu_nsr = 0
        b_nsr = 1.0
    b_sr = n_sr / len(sr) if sr else 0.0

    deff = np.array(
        [
            deff_extended(N_sr, N_nsr, n_sr, n_nsr, r_sr, r_nsr, design.delta, b_nsr)
            for r_sr, r_nsr in zip(rho.rho_sr, rho.rho_nsr)
        ]
    )
    return StratumPsuDesign(
        threshold=threshold,
        psu_sr=len(sr),
        psu_nsr=psu_nsr,
        N_sr=N_sr,
        N_nsr=N_nsr,
        n_sr=n_sr,
        n_nsr=n_nsr,
        b_sr=b_sr,
        b_nsr=b_nsr,
        deff=deff,
    )


class TwoStageAllocator(LoggerMixin):
    """Iterates Bethel solves with PSU design updates until the stop rule fires"""

    def __init__(
        self,
        strata: Sequence[StratumInfo],
        constraints: Sequence[PrecisionConstraint],
        design: Sequence[DesignParams],
        psus: Sequence[PsuRecord],
        rho: Sequence[RhoRecord],
        deft_start: Optional[Sequence[FactorRecord]] = None,
        effst: Optional[Sequence[FactorRecord]] = None,
        minnumstrat: Optional[int] = None,
        min_psu_strat: Optional[int] = None,
        stop: Optional[StopRule] = None,
    ):
        settings = get_settings()
        self.strata = list(strata)
        self.strata_ids = [s.stratum_id for s in self.strata]
        self.cells: List[DomainCell] = validate_domains(self.strata, constraints)
        self.minnumstrat = settings.minnumstrat if minnumstrat is None else minnumstrat
        self.min_psu_strat = settings.min_psu_strat if min_psu_strat is None else min_psu_strat
        self.stop = stop or StopRule.from_settings()
        if self.min_psu_strat < 1:
            raise SchemaError("minPSUstrat must be at least 1")

        n_variables = self.strata[0].n_variables
        self.deft_start = factor_matrix(deft_start, self.strata_ids, n_variables)
        self.effst_root = np.sqrt(factor_matrix(effst, self.strata_ids, n_variables))
        self.design = self._by_stratum(design, "des")
        self.rho = self._by_stratum(rho, "rho")
        self.psus: Dict[str, List[PsuRecord]] = {sid: [] for sid in self.strata_ids}
        for psu in psus:
            if psu.stratum_id not in self.psus:
                raise DanglingReferenceError(f"PSU {psu.psu_id!r} refers to unknown stratum {psu.stratum_id!r}")
            self.psus[psu.stratum_id].append(psu)
        for sid, members in self.psus.items():
            if not members:
                raise DanglingReferenceError(f"stratum {sid!r} has no PSUs")

    def _by_stratum(self, records, table: str) -> Dict[str, object]:
        mapping = {r.stratum_id: r for r in records}
        missing = [sid for sid in self.strata_ids if sid not in mapping]
        if missing:
            raise DanglingReferenceError(f"{table}: no row for strata {missing}")
        return mapping

    def psu_designs(self, n: np.ndarray) -> List[StratumPsuDesign]:
        return [
            stratum_psu_design(
                float(n_h),
                float(s.N),
                self.psus[s.stratum_id],
                self.design[s.stratum_id],
                self.rho[s.stratum_id],
                self.min_psu_strat,
            )
            for n_h, s in zip(n, self.strata)
        ]

    def _state(self, k: int, solved: SolvedAllocation, deft: np.ndarray) -> TwoStageState:
        n = solved.solution.n_int
        designs = self.psu_designs(n)
        return TwoStageState(
            iter=k,
            n=n,
            threshold=np.array([d.threshold for d in designs]),
            deft=deft,
            psu_sr=np.array([d.psu_sr for d in designs], dtype=int),
            psu_nsr=np.array([d.psu_nsr for d in designs], dtype=int),
            b_sr=np.array([d.b_sr for d in designs]),
            b_nsr=np.array([d.b_nsr for d in designs]),
            solved=solved,
        )

    def _solve(self, deft: np.ndarray) -> SolvedAllocation:
        return solve_allocation(self.strata, self.cells, self.minnumstrat, inflation=deft * self.effst_root)

    def run(self) -> AllocationResult:
        start = time.time()
        self.log_info(
            "Starting two-stage allocation",
            strata=len(self.strata),
            domains=len(self.cells),
            minnumstrat=self.minnumstrat,
            min_psu_strat=self.min_psu_strat,
        )

        first = self._solve(self.deft_start)
        rows = [[0, 0, 0, 0, int(np.sum(first.solution.n_int))]]
        deft_rows = self._deft_rows(0, self.deft_start)
        zeros = np.zeros(len(self.strata))
        states = [
            TwoStageState(
                iter=0,
                n=first.solution.n_int,
                threshold=zeros,
                deft=self.deft_start,
                psu_sr=zeros.astype(int),
                psu_nsr=zeros.astype(int),
                b_sr=zeros,
                b_nsr=np.ones(len(self.strata)),
                solved=first,
            )
        ]
        converged = False
        final = states[0]

        for k in range(1, self.stop.max_iters + 1):
            previous = states[-1]
            designs = self.psu_designs(previous.n)
            # rounding noise would otherwise leave deff a hair away from 1 when rho is 0
            deft = np.round(np.sqrt(np.vstack([d.deff for d in designs])), 12)
            state = self._state(k, self._solve(deft), deft)
            states.append(state)
            rows.append([k, int(state.psu_sr.sum()), int(state.psu_nsr.sum()), state.total_psu, state.total_ssu])
            deft_rows.extend(self._deft_rows(k, deft))
            final = state

            ssu_diff = abs(state.total_ssu - previous.total_ssu)
            deft_diff = float(np.max(np.abs(deft - previous.deft)))
            if ssu_diff < self.stop.max_ssu_diff or deft_diff < self.stop.max_deft_diff:
                converged = True
                break
            if k >= 2 and self._repeats(states[-3], state):
                final = min(states[-2], state, key=lambda s: s.total_ssu)
                self.log_warning(
                    "Two-stage allocation oscillates between two iterates; keeping the smaller",
                    iteration=k,
                    ssu=final.total_ssu,
                )
                break
        else:
            self.log_warning("Two-stage allocation stopped at the iteration cap", max_iters=self.stop.max_iters)

        result = self._result(final, rows, deft_rows, converged)
        log_performance(
            self.logger,
            "beat_2st",
            time.time() - start,
            iterations=len(rows) - 1,
            psu=final.total_psu,
            ssu=final.total_ssu,
            converged=converged,
        )
        return result

    @staticmethod
    def _repeats(older: TwoStageState, newer: TwoStageState) -> bool:
        return np.array_equal(older.n, newer.n) and np.array_equal(older.psu_nsr, newer.psu_nsr)

    def _deft_rows(self, k: int, deft: np.ndarray) -> List[dict]:
        rows = []
        for sid, values in zip(self.strata_ids, deft):
            row = {"iter": k, "STRATUM": sid}
            row.update({f"DEFT{j + 1}": float(v) for j, v in enumerate(values)})
            rows.append(row)
        return rows

    def _result(self, final: TwoStageState, rows, deft_rows, converged: bool) -> AllocationResult:
        inflation = final.deft * self.effst_root
        solution = final.solved.solution
        return AllocationResult(
            strata_ids=self.strata_ids,
            n=solution.n_int,
            n_continuous=solution.n_cont,
            iterations=pd.DataFrame(rows, columns=ITERATION_COLUMNS),
            expected_cv=cv_table(self.cells, cv_matrix(solution.n_int, self.strata, self.cells, inflation)),
            planned_cv=planned_cv(self.cells),
            sensitivity=sensitivity_10pct(final.solved, self.strata, inflation),
            alloc=allocation_table(self.strata_ids, solution.n_int, self.strata),
            take_all=solution.take_all,
            psu_sr=final.psu_sr,
            psu_nsr=final.psu_nsr,
            threshold=final.threshold,
            deft_trace=pd.DataFrame(deft_rows),
            converged=converged,
            params={
                "stages": 2,
                "minnumstrat": self.minnumstrat,
                "min_psu_strat": self.min_psu_strat,
                "stop_rule": {
                    "max_ssu_diff": self.stop.max_ssu_diff,
                    "max_deft_diff": self.stop.max_deft_diff,
                    "max_iters": self.stop.max_iters,
                },
                "final_iteration": final.iter,
                "b_sr": final.b_sr.tolist(),
                "b_nsr": final.b_nsr.tolist(),
            },
        )


def beat_2st(
    strata: Sequence[StratumInfo],
    constraints: Sequence[PrecisionConstraint],
    design: Sequence[DesignParams],
    psus: Sequence[PsuRecord],
    rho: Sequence[RhoRecord],
    deft_start: Optional[Sequence[FactorRecord]] = None,
    effst: Optional[Sequence[FactorRecord]] = None,
    minnumstrat: Optional[int] = None,
    min_psu_strat: Optional[int] = None,
    stop: Optional[StopRule] = None,
) -> AllocationResult:
    """
    Optimal allocation of PSUs and SSUs in a two-stage stratified design

    Args:
        strata: Strata records (N equal to the PSU measure-of-size totals)
        constraints: CV bounds per domain type or category
        design: DELTA and MINIMUM per stratum
        psus: PSU list with measures of size
        rho: Intraclass correlations per stratum
        deft_start: deft used for the first solve (1 when omitted)
        effst: Estimator effects (1 when omitted)
        minnumstrat: Minimum SSUs per stratum
        min_psu_strat: Minimum NSR PSUs per stratum with an NSR allocation
        stop: Stop rule (defaults 5 SSUs, 0.06 deft, 20 iterations)

    Returns:
        AllocationResult with PSU counts, thresholds, iteration and deft traces
    """
    return TwoStageAllocator(
        strata, constraints, design, psus, rho, deft_start, effst, minnumstrat, min_psu_strat, stop
    ).run()


def minimum_grid(low: int, high: int, n_points: int = 10) -> List[int]:
    """Evenly spaced integer MINIMUM values between low and high, duplicates removed"""
    if low > high:
        raise InfeasibleError(f"grid lower end {low} exceeds upper end {high}")
    if n_points < 1:
        raise InfeasibleError("the grid needs at least one point")
    if low == high:
        return [int(low)]
    values = np.rint(np.linspace(low, high, n_points)).astype(int)
    return list(dict.fromkeys(int(v) for v in values))


def sensitivity_min_ssu(
    strata: Sequence[StratumInfo],
    constraints: Sequence[PrecisionConstraint],
    design: Sequence[DesignParams],
    psus: Sequence[PsuRecord],
    rho: Sequence[RhoRecord],
    low: int,
    high: int,
    n_points: int = 10,
    deft_start: Optional[Sequence[FactorRecord]] = None,
    effst: Optional[Sequence[FactorRecord]] = None,
    minnumstrat: Optional[int] = None,
    min_psu_strat: Optional[int] = None,
    stop: Optional[StopRule] = None,
    jobs: int = 1,
) -> pd.DataFrame:
    """
    PSU and SSU totals of the two-stage allocation over a grid of MINIMUM values

    Every stratum's MINIMUM is set to the grid value; grid points run independently and
    the output order follows the grid regardless of ``jobs``.

    Returns:
        DataFrame with MINIMUM, PSU_TOTAL, SSU_TOTAL
    """
    grid = minimum_grid(low, high, n_points)
    logger.info(
        f"Sensitivity over MINIMUM in [{low}, {high}]: {len(grid)} points",
        extra={"extra_data": {"grid": grid, "jobs": jobs}},
    )

    def run_point(minimum: int) -> dict:
        adjusted = [d.model_copy(update={"minimum": minimum}) for d in design]
        result = beat_2st(strata, constraints, adjusted, psus, rho, deft_start, effst, minnumstrat, min_psu_strat, stop)
        return {
            "MINIMUM": minimum,
            "PSU_TOTAL": int(np.sum(result.psu_sr) + np.sum(result.psu_nsr)),
            "SSU_TOTAL": result.total_ssu,
        }

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_point, grid))
    else:
        rows = [run_point(m) for m in grid]
    return pd.DataFrame(rows, columns=["MINIMUM", "PSU_TOTAL", "SSU_TOTAL"])

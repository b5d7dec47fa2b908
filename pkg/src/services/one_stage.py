"""
One-stage stratified allocation

beat_1st solves the Bethel problem for the given strata and domain constraints and
reports the allocation next to proportional and uniform allocations of the same total,
the expected CVs, and the sample size saved by relaxing each CV bound by 10%.
"""

import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import get_settings
from data.validation import DomainCell, validate_domains
from schemas.records import AllocationResult, PrecisionConstraint, StratumInfo
from services.baseline_allocation import alloc_proportional, alloc_uniform
from services.bethel import (
    BethelSolution,
    ExpandedConstraintMatrix,
    bethel_solve,
    build_constraints,
    cv_matrix,
    cv_table,
    planned_cv,
)
from utils.logger import get_logger, log_performance, log_stage

logger = get_logger(__name__)

SENSITIVITY_FACTOR = 1.1
INACTIVE_MULTIPLIER = 1e-10
ITERATION_COLUMNS = ["iter", "PSU_SR", "PSU_NSR", "PSU_Total", "SSU"]


@dataclass
class SolvedAllocation:
    """A Bethel solve together with the matrix it was computed from"""

    matrix: ExpandedConstraintMatrix
    solution: BethelSolution
    cells: List[DomainCell]


def solve_allocation(
    strata: Sequence[StratumInfo],
    cells: Sequence[DomainCell],
    minnumstrat: int,
    inflation: Optional[np.ndarray] = None,
    epsilon: Optional[float] = None,
    max_iters: Optional[int] = None,
) -> SolvedAllocation:
    """Build the constraint matrix and run the solver with the configured tolerances"""
    settings = get_settings()
    matrix = build_constraints(strata, cells, minnumstrat=minnumstrat, inflation=inflation)
    solution = bethel_solve(
        matrix,
        epsilon=settings.bethel_epsilon if epsilon is None else epsilon,
        max_iters=settings.bethel_max_iters if max_iters is None else max_iters,
    )
    return SolvedAllocation(matrix=matrix, solution=solution, cells=list(cells))


def sensitivity_10pct(
    solved: SolvedAllocation,
    strata: Sequence[StratumInfo],
    inflation: Optional[np.ndarray] = None,
    factor: float = SENSITIVITY_FACTOR,
) -> pd.DataFrame:
    """
    Change in total sample size when each CV bound is relaxed by 10%

    Deltas compare continuous allocations (rounded to whole units) so they are never
    positive. Constraints with a zero multiplier that are slack at the optimum report 0
    without a re-solve.

    Returns:
        DataFrame with DOM, DOMAIN_VALUE, VAR, PLANNED_CV, ACTUAL_CV, SENS_10PCT
    """
    settings = get_settings()
    matrix = solved.matrix
    solution = solved.solution
    base_total = float(np.sum(solution.n_cont))
    actual = cv_matrix(solution.n_int, strata, solved.cells, inflation)
    load = _constraint_load(matrix, solution.n_cont)

    cell_index = {id(cell): d for d, cell in enumerate(solved.cells)}
    rows = []
    for q, (cell, j) in enumerate(matrix.cells):
        inactive = solution.multipliers[q] < INACTIVE_MULTIPLIER and load[q] < 1.0 - 1e-9
        if inactive:
            delta = 0
        else:
            relaxed = bethel_solve(
                matrix.relaxed(q, factor),
                epsilon=settings.bethel_epsilon,
                max_iters=settings.bethel_max_iters,
            )
            delta = int(round(float(np.sum(relaxed.n_cont)) - base_total))
            delta = min(delta, 0)
        rows.append(
            {
                "DOM": cell.domain_type,
                "DOMAIN_VALUE": cell.category,
                "VAR": f"V{j + 1}",
                "PLANNED_CV": cell.cv[j],
                "ACTUAL_CV": actual[cell_index[id(cell)], j],
                "SENS_10PCT": delta,
            }
        )
    return pd.DataFrame(rows, columns=["DOM", "DOMAIN_VALUE", "VAR", "PLANNED_CV", "ACTUAL_CV", "SENS_10PCT"])


def _constraint_load(matrix: ExpandedConstraintMatrix, n: np.ndarray) -> np.ndarray:
    """sum_h a[h, q] / n_h for every constraint"""
    inverse = np.divide(1.0, n, out=np.zeros_like(n, dtype=float), where=n > 0)
    return inverse @ matrix.a


def allocation_table(strata_ids: Sequence[str], n: np.ndarray, strata: Sequence[StratumInfo]) -> pd.DataFrame:
    """STRATUM, ALLOC, PROP, EQUAL at the same total sample size"""
    total = int(np.sum(n))
    return pd.DataFrame(
        {
            "STRATUM": list(strata_ids),
            "ALLOC": np.asarray(n, dtype=int),
            "PROP": alloc_proportional(total, strata),
            "EQUAL": alloc_uniform(total, strata),
        }
    )


def beat_1st(
    strata: Sequence[StratumInfo],
    constraints: Sequence[PrecisionConstraint],
    minnumstrat: Optional[int] = None,
    inflation: Optional[np.ndarray] = None,
) -> AllocationResult:
    """
    Multivariate multi-domain optimal allocation for a one-stage stratified design

    Args:
        strata: Strata records
        constraints: CV bounds per domain type or category
        minnumstrat: Minimum units per stratum (default from settings, 2)
        inflation: Optional L x J multiplier applied to the standard deviations

    Returns:
        AllocationResult with the Bethel allocation, baseline columns, CVs and sensitivity
    """
    start = time.time()
    settings = get_settings()
    minnumstrat = settings.minnumstrat if minnumstrat is None else minnumstrat
    cells = validate_domains(strata, constraints)
    log_stage(logger, "beat_1st", strata=len(strata), domains=len(cells), minnumstrat=minnumstrat)

    solved = solve_allocation(strata, cells, minnumstrat, inflation=inflation)
    solution = solved.solution
    strata_ids = [s.stratum_id for s in strata]

    iterations = pd.DataFrame([[0, 0, 0, 0, int(np.sum(solution.n_int))]], columns=ITERATION_COLUMNS)
    expected = cv_table(cells, cv_matrix(solution.n_int, strata, cells, inflation))
    sensitivity = sensitivity_10pct(solved, strata, inflation)

    if solution.take_all.any():
        logger.info(
            "Take-all strata in the allocation",
            extra={"extra_data": {"strata": [sid for sid, t in zip(strata_ids, solution.take_all) if t]}},
        )
    log_performance(logger, "beat_1st", time.time() - start, total=int(np.sum(solution.n_int)))

    return AllocationResult(
        strata_ids=strata_ids,
        n=solution.n_int,
        n_continuous=solution.n_cont,
        iterations=iterations,
        expected_cv=expected,
        planned_cv=planned_cv(cells),
        sensitivity=sensitivity,
        alloc=allocation_table(strata_ids, solution.n_int, strata),
        take_all=solution.take_all,
        converged=solution.converged,
        params={"minnumstrat": minnumstrat, "stages": 1, "multipliers": solution.multipliers.tolist()},
    )

"""
Monte Carlo evaluation of a two-stage design

Repeated two-stage samples are drawn from the frame; domain means are estimated with
the design weights of each sample, and the spread of the estimates over the replicates
gives the empirical CV of every (domain, variable).
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from data.validation import DomainCell
from schemas.errors import EvaluationError, SchemaError
from schemas.records import StratumInfo
from schemas.tables import require_columns
from services.psu_selection import StratumPlan, draw_psu_sample, sample_table
from services.ssu_selection import psu_unit_index, select_ssu
from utils.logger import LoggerMixin, get_logger, log_performance
from utils.numeric import stable_sum
from utils.random_streams import derive_seed

logger = get_logger(__name__)


def estimate_mean(
    values: Sequence[float],
    weights: Sequence[float],
    population: Optional[float] = None,
) -> float:
    """
    Weighted mean of a domain sample

    With the domain population size the estimate is Horvitz-Thompson, sum(d y) / N_d;
    without it the weights are normalised by their own total. An empty sample gives NaN.
    """
    y = np.asarray(values, dtype=float)
    d = np.asarray(weights, dtype=float)
    if y.size == 0:
        logger.warning("Empty domain sample; estimate is missing")
        return float("nan")
    total = stable_sum(d * y)
    denominator = float(population) if population is not None else stable_sum(d)
    return total / denominator


@dataclass
class EvalReport:
    """Replicate summary per (domain category, variable)"""

    nsampl: int
    coeff_var: pd.DataFrame
    summary: pd.DataFrame

    def max_ratio(self) -> float:
        """Largest empirical CV divided by its planned bound"""
        return float((self.summary["CV"] / self.summary["PLANNED_CV"]).max())


class DesignEvaluator(LoggerMixin):
    """Runs replicate selections and collects domain estimates"""

    def __init__(
        self,
        frame: pd.DataFrame,
        plans: Sequence[StratumPlan],
        strata: Sequence[StratumInfo],
        cells: Sequence[DomainCell],
        target_vars: Sequence[str],
        strata_var: str = "STRATUM",
        psu_col: str = "PSU_ID",
        redraw_psu: bool = True,
    ):
        require_columns(frame, [strata_var, psu_col, *target_vars], "frame")
        if len(target_vars) != strata[0].n_variables:
            raise EvaluationError(f"{len(target_vars)} target columns for {strata[0].n_variables} variables")
        self.frame = frame.reset_index(drop=True)
        for var in target_vars:
            try:
                self.frame[var] = pd.to_numeric(self.frame[var], errors="raise").astype(float)
            except (TypeError, ValueError):
                raise SchemaError(f"frame: non-numeric values in target column {var}") from None
        self.frame[strata_var] = self.frame[strata_var].astype(str)
        self.plans = list(plans)
        self.cells = list(cells)
        self.target_vars = list(target_vars)
        self.strata_var = strata_var
        self.psu_col = psu_col
        self.redraw_psu = redraw_psu
        self.unit_index = psu_unit_index(self.frame, psu_col)

        strata_ids = np.array([s.stratum_id for s in strata], dtype=object)
        self.domain_strata = [set(strata_ids[np.asarray(c.members, dtype=bool)]) for c in self.cells]
        self.domain_sizes = [int(self.frame[strata_var].isin(ids).sum()) for ids in self.domain_strata]
        self.true_means = np.array(
            [
                [self.frame.loc[self.frame[strata_var].isin(ids), v].mean() for v in self.target_vars]
                for ids in self.domain_strata
            ]
        )

    def replicate(self, r: int, seed: int, fixed_sample: Optional[pd.DataFrame] = None) -> np.ndarray:
        """Domain estimates (D x J) of replicate r"""
        replicate_seed = derive_seed(seed, "replicate", r)
        if self.redraw_psu or fixed_sample is None:
            sample_psu = sample_table(draw_psu_sample(self.plans, replicate_seed))
        else:
            sample_psu = fixed_sample
        sample = select_ssu(self.frame, sample_psu, replicate_seed, self.psu_col, self.unit_index)
        estimates = np.full((len(self.cells), len(self.target_vars)), np.nan)
        for d, ids in enumerate(self.domain_strata):
            rows = sample[sample[self.strata_var].isin(ids)]
            if rows.empty:
                continue
            for j, var in enumerate(self.target_vars):
                estimates[d, j] = estimate_mean(rows[var], rows["WEIGHT"], self.domain_sizes[d])
        return estimates

    def run(self, nsampl: int, seed: int, jobs: int = 1) -> EvalReport:
        if nsampl < 2:
            raise EvaluationError("nsampl must be >= 2")
        start = time.time()
        fixed = None
        if not self.redraw_psu:
            fixed = sample_table(draw_psu_sample(self.plans, derive_seed(seed, "replicate", "fixed")))

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(lambda r: self.replicate(r, seed, fixed), range(1, nsampl + 1)))
        else:
            results = [self.replicate(r, seed, fixed) for r in range(1, nsampl + 1)]
        stack = np.stack(results)

        report = self._report(stack, nsampl)
        log_performance(self.logger, "eval_2stage", time.time() - start, nsampl=nsampl, jobs=jobs)
        return report

    def _report(self, stack: np.ndarray, nsampl: int) -> EvalReport:
        rows = []
        cv = np.full(stack.shape[1:], np.nan)
        for d, cell in enumerate(self.cells):
            for j, var in enumerate(self.target_vars):
                values = stack[:, d, j]
                valid = values[~np.isnan(values)]
                dropped = int(nsampl - valid.size)
                if dropped:
                    self.log_warning(
                        "Replicates without sample in domain dropped",
                        domain=cell.label,
                        variable=var,
                        dropped=dropped,
                    )
                mean = float(valid.mean()) if valid.size else float("nan")
                sd = float(valid.std(ddof=1)) if valid.size >= 2 else float("nan")
                if valid.size >= 2 and mean != 0:
                    cv[d, j] = abs(sd / mean)
                elif valid.size >= 2 and sd == 0:
                    cv[d, j] = 0.0
                rows.append(
                    {
                        "DOM": cell.domain_type,
                        "DOMAIN_VALUE": cell.category,
                        "VAR": var,
                        "MEAN": mean,
                        "SD": sd,
                        "CV": cv[d, j],
                        "PLANNED_CV": cell.cv[j],
                        "TRUE_MEAN": float(self.true_means[d, j]),
                        "DROPPED": dropped,
                    }
                )

        coeff_var = pd.DataFrame({f"CV{j + 1}": cv[:, j] for j in range(cv.shape[1])})
        coeff_var["dom"] = [c.label for c in self.cells]
        return EvalReport(nsampl=nsampl, coeff_var=coeff_var, summary=pd.DataFrame(rows))


def eval_2stage(
    frame: pd.DataFrame,
    plans: Sequence[StratumPlan],
    strata: Sequence[StratumInfo],
    cells: Sequence[DomainCell],
    target_vars: Sequence[str],
    nsampl: int = 500,
    seed: int = 0,
    strata_var: str = "STRATUM",
    psu_col: str = "PSU_ID",
    redraw_psu: bool = True,
    jobs: int = 1,
) -> EvalReport:
    """
    Empirical CVs of the domain means over ``nsampl`` replicate samples

    Args:
        frame: Unit-level frame
        plans: PSU selection plans (see plan_psu_selection)
        strata: Strata records (domain membership)
        cells: Resolved domain categories
        target_vars: Frame columns of the target variables, in variable order
        nsampl: Number of replicates (at least 2)
        seed: Master seed; replicate r uses derive_seed(seed, "replicate", r)
        strata_var: Stratum column of the frame
        psu_col: PSU column of the frame
        redraw_psu: Redraw the NSR PSUs in every replicate (otherwise only SSUs vary)
        jobs: Worker threads; results do not depend on it

    Returns:
        EvalReport
    """
    if nsampl < 2:
        raise EvaluationError("nsampl must be >= 2")
    evaluator = DesignEvaluator(frame, plans, strata, cells, target_vars, strata_var, psu_col, redraw_psu)
    return evaluator.run(nsampl, seed, jobs)

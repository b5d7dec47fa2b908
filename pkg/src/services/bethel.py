"""
Multivariate multi-domain allocation (Bethel)

Each precision constraint CV(domain d, variable j) <= delta is rewritten as a linear
constraint in x_h = 1/n_h:

    sum_h a[h, q] / n_h <= 1,   a[h, q] = (N_h/N_d)^2 S_hj^2 / (delta^2 Ybar_dj^2 + sum_h (N_h/N_d)^2 S_hj^2 / N_h)

and the minimum-cost allocation is found with the Lagrangian multiplier fixed point:
for normalized multipliers alpha, n_h(alpha) = sqrt(A_h / c_h) * sum_k sqrt(A_k c_k) with
A_h = sum_q alpha_q a[h, q]; alpha is then reweighted by the squared constraint values.
Strata whose allocation leaves [minnumstrat, N_h] are frozen at the violated bound and
the problem is solved again for the remaining strata.
"""

import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from data.validation import DomainCell
from schemas.errors import SchemaError
from schemas.records import StratumInfo
from utils.logger import LoggerMixin, log_performance
from utils.numeric import stable_sum

DEFAULT_EPSILON = 1e-11
DEFAULT_MAX_ITERS = 200
_TINY = 1e-12


@dataclass(frozen=True)
class StrataArrays:
    """Column view of the strata table"""

    ids: List[str]
    N: np.ndarray
    means: np.ndarray  # L x J
    stdevs: np.ndarray  # L x J
    cost: np.ndarray
    cens: np.ndarray

    @classmethod
    def from_records(cls, strata: Sequence[StratumInfo]) -> "StrataArrays":
        return cls(
            ids=[s.stratum_id for s in strata],
            N=np.array([s.N for s in strata], dtype=float),
            means=np.array([s.means for s in strata], dtype=float),
            stdevs=np.array([s.stdevs for s in strata], dtype=float),
            cost=np.array([s.cost for s in strata], dtype=float),
            cens=np.array([s.cens for s in strata], dtype=bool),
        )

    @property
    def n_strata(self) -> int:
        return len(self.ids)

    @property
    def n_variables(self) -> int:
        return self.means.shape[1]

    def inflated(self, factor: Optional[np.ndarray]) -> np.ndarray:
        """Standard deviations multiplied elementwise by ``factor`` (deft * sqrt(effst))"""
        if factor is None:
            return self.stdevs
        return self.stdevs * factor


@dataclass
class ExpandedConstraintMatrix:
    """Normalized constraint coefficients a[h, q] for every (domain category, variable)"""

    numerator: np.ndarray  # L x Q, (N_h/N_d)^2 S^2 inside the domain, 0 outside
    target: np.ndarray  # Q, delta^2 Ybar^2
    fpc: np.ndarray  # Q, sum_h numerator / N_h
    cost: np.ndarray
    N: np.ndarray
    lower: np.ndarray
    take_all: np.ndarray
    cells: List[Tuple[DomainCell, int]]

    @property
    def a(self) -> np.ndarray:
        return self.numerator / (self.target + self.fpc)[None, :]

    @property
    def n_constraints(self) -> int:
        return self.numerator.shape[1]

    def relaxed(self, q: int, factor: float) -> "ExpandedConstraintMatrix":
        """Copy with the CV bound of constraint q multiplied by ``factor``"""
        target = self.target.copy()
        target[q] = target[q] * factor**2
        return replace(self, target=target)


@dataclass
class BethelSolution:
    """Continuous and integer allocations plus the final multipliers"""

    n_cont: np.ndarray
    n_int: np.ndarray
    multipliers: np.ndarray
    converged: bool
    iters: int
    take_all: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def cost(self, unit_cost: np.ndarray) -> float:
        return float(np.dot(self.n_int, unit_cost))


def build_constraints(
    strata: Sequence[StratumInfo],
    cells: Sequence[DomainCell],
    minnumstrat: int = 2,
    inflation: Optional[np.ndarray] = None,
) -> ExpandedConstraintMatrix:
    """
    Expand domain CV bounds into the normalized constraint matrix

    Args:
        strata: Strata records
        cells: Resolved domain categories (see data.validation.validate_domains)
        minnumstrat: Minimum sample size per stratum (capped at N_h)
        inflation: Optional L x J multiplier applied to the standard deviations

    Returns:
        ExpandedConstraintMatrix with one column per (category, variable)
    """
    arrays = StrataArrays.from_records(strata)
    stdevs = arrays.inflated(inflation)
    columns = []
    targets = []
    fpcs = []
    labels = []
    for cell in cells:
        members = np.asarray(cell.members, dtype=bool)
        N_d = float(arrays.N[members].sum())
        share = np.where(members, arrays.N / N_d, 0.0)
        for j in range(arrays.n_variables):
            ybar = float(np.dot(share, arrays.means[:, j]))
            if ybar == 0.0:
                raise SchemaError(f"CV undefined for zero mean ({cell.label}, variable {j + 1})")
            numerator = share**2 * stdevs[:, j] ** 2
            columns.append(numerator)
            targets.append((cell.cv[j] * ybar) ** 2)
            fpcs.append(stable_sum(numerator / arrays.N))
            labels.append((cell, j))

    lower = np.minimum(float(minnumstrat), arrays.N)
    return ExpandedConstraintMatrix(
        numerator=np.column_stack(columns) if columns else np.zeros((arrays.n_strata, 0)),
        target=np.array(targets, dtype=float),
        fpc=np.array(fpcs, dtype=float),
        cost=arrays.cost,
        N=arrays.N,
        lower=lower,
        take_all=arrays.cens.copy(),
        cells=labels,
    )


class BethelSolver(LoggerMixin):
    """Active-set wrapper around the multiplier fixed point"""

    def __init__(self, epsilon: float = DEFAULT_EPSILON, max_iters: int = DEFAULT_MAX_ITERS):
        self.epsilon = epsilon
        self.max_iters = max_iters

    def solve(self, matrix: ExpandedConstraintMatrix, minnumstrat: Optional[int] = None) -> BethelSolution:
        start = time.time()
        a = matrix.a
        L, Q = a.shape
        N = matrix.N
        lower = matrix.lower if minnumstrat is None else np.minimum(float(minnumstrat), N)
        fixed = np.full(L, np.nan)
        fixed[matrix.take_all] = N[matrix.take_all]

        multipliers = np.zeros(Q)
        converged = True
        iters = 0
        n_free = np.zeros(0)

        for _ in range(L + 1):
            free = np.isnan(fixed)
            if not free.any():
                break
            residual = 1.0 - np.nansum(a / np.where(np.isnan(fixed), np.inf, fixed)[:, None], axis=0)
            a_free = a[free]
            touched = a_free.sum(axis=0) > 0
            exhausted = touched & (residual <= _TINY)
            if exhausted.any():
                # the frozen strata already use up the constraint, so every free stratum in it goes to census
                hit = free & (a[:, exhausted].sum(axis=1) > 0)
                fixed[hit] = N[hit]
                self.log_warning("Constraint exhausted by frozen strata; census assigned", strata=int(hit.sum()))
                continue

            active = np.flatnonzero(touched)
            if active.size == 0:
                n_free = np.zeros(int(free.sum()))
                multipliers = np.zeros(Q)
            else:
                scaled = a_free[:, active] / residual[active][None, :]
                n_free, alpha, ok, used = self._fixed_point(scaled, matrix.cost[free])
                multipliers = np.zeros(Q)
                multipliers[active] = alpha
                converged = converged and ok
                iters += used

            upper_hit = n_free > N[free] * (1 + 1e-12)
            lower_hit = n_free < lower[free]
            free_idx = np.flatnonzero(free)
            if upper_hit.any():
                fixed[free_idx[upper_hit]] = N[free_idx[upper_hit]]
                continue
            if lower_hit.any():
                fixed[free_idx[lower_hit]] = lower[free_idx[lower_hit]]
                continue
            break

        n_cont = fixed.copy()
        free = np.isnan(n_cont)
        if free.any():
            n_cont[free] = n_free
        take_all = n_cont >= N
        load = self._constraint_values(a, n_cont) if Q else np.zeros(0)
        if np.any(load > 1.0 + 1e-9):
            self.log_warning(
                "Constraints exceed their bound at the bounded allocation",
                violated=int(np.sum(load > 1.0 + 1e-9)),
                worst=float(load.max()),
            )

        n_int = np.ceil(n_cont - 1e-9).astype(int)
        n_int = np.clip(n_int, lower.astype(int), N.astype(int))

        total = multipliers.sum()
        multipliers = multipliers / total if total > 0 else np.full(Q, 1.0 / Q) if Q else multipliers

        if not converged:
            self.log_warning(
                "Multiplier iteration did not converge; returning the last iterate",
                max_iters=self.max_iters,
                epsilon=self.epsilon,
            )
        log_performance(self.logger, "bethel_solve", time.time() - start, strata=L, constraints=Q, iters=iters)
        return BethelSolution(
            n_cont=n_cont,
            n_int=n_int,
            multipliers=multipliers,
            converged=converged,
            iters=iters,
            take_all=take_all,
        )

    def _fixed_point(self, a: np.ndarray, cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool, int]:
        """Solve min sum c_h n_h s.t. sum_h a[h, q] / n_h <= 1 without bounds"""
        Q = a.shape[1]
        alpha = np.full(Q, 1.0 / Q)
        converged = False
        iters = 0
        for iters in range(1, self.max_iters + 1):
            n = self._allocation(a, cost, alpha)
            g = self._constraint_values(a, n)
            weight = alpha * g**2
            total = weight.sum()
            if total <= 0:
                converged = True
                break
            updated = weight / total
            diff = float(np.max(np.abs(updated - alpha)))
            alpha = updated
            if diff < self.epsilon:
                converged = True
                break

        n = self._allocation(a, cost, alpha)
        g_max = float(np.max(self._constraint_values(a, n)))
        if g_max > 1.0:
            # rescaling restores feasibility of a not fully converged iterate
            n = n * g_max
        return n, alpha, converged, iters

    @staticmethod
    def _allocation(a: np.ndarray, cost: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        combined = a @ alpha
        root = np.sqrt(np.maximum(combined, 0.0))
        scale = float(np.sum(root * np.sqrt(cost)))
        return root / np.sqrt(cost) * scale

    @staticmethod
    def _constraint_values(a: np.ndarray, n: np.ndarray) -> np.ndarray:
        inverse = np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)
        return inverse @ a


def bethel_solve(
    matrix: ExpandedConstraintMatrix,
    minnumstrat: Optional[int] = None,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> BethelSolution:
    """
    Minimum-cost allocation satisfying every constraint of ``matrix``

    Args:
        matrix: Output of build_constraints
        minnumstrat: Override of the per-stratum minimum stored in the matrix
        epsilon: Multiplier fixed-point tolerance
        max_iters: Multiplier fixed-point iteration cap

    Returns:
        BethelSolution; integer sizes are ceilings of the continuous ones clamped to
        [minnumstrat, N_h]
    """
    return BethelSolver(epsilon=epsilon, max_iters=max_iters).solve(matrix, minnumstrat=minnumstrat)


def cv_matrix(
    n: np.ndarray,
    strata: Sequence[StratumInfo],
    cells: Sequence[DomainCell],
    inflation: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Expected CV for every (cell, variable) as a D x J array"""
    arrays = StrataArrays.from_records(strata)
    stdevs = arrays.inflated(inflation)
    n = np.asarray(n, dtype=float)
    fpc = np.clip(1.0 / n - 1.0 / arrays.N, 0.0, None)
    out = np.zeros((len(cells), arrays.n_variables))
    for d, cell in enumerate(cells):
        members = np.asarray(cell.members, dtype=bool)
        share = np.where(members, arrays.N / arrays.N[members].sum(), 0.0)
        for j in range(arrays.n_variables):
            ybar = float(np.dot(share, arrays.means[:, j]))
            variance = stable_sum(share**2 * fpc * stdevs[:, j] ** 2)
            out[d, j] = math.sqrt(variance) / abs(ybar) if ybar != 0 else np.nan
    return out


def cv_table(cells: Sequence[DomainCell], values: np.ndarray) -> pd.DataFrame:
    """DOM, DOMAIN_VALUE, CV1..CVJ"""
    table = pd.DataFrame(
        {
            "DOM": [c.domain_type for c in cells],
            "DOMAIN_VALUE": [c.category for c in cells],
        }
    )
    for j in range(values.shape[1]):
        table[f"CV{j + 1}"] = values[:, j]
    return table


def expected_cv(
    n: np.ndarray,
    strata: Sequence[StratumInfo],
    cells: Sequence[DomainCell],
    inflation: Optional[np.ndarray] = None,
) -> pd.DataFrame:
    """
    Expected CVs of the domain means under allocation ``n``

    Var(Ybar_d) = sum_{h in d} (N_h/N_d)^2 (1/n_h - 1/N_h) S_hj^2; a census gives zero.
    """
    return cv_table(cells, cv_matrix(n, strata, cells, inflation))


def planned_cv(cells: Sequence[DomainCell]) -> pd.DataFrame:
    """The CV bounds laid out like expected_cv"""
    return cv_table(cells, np.array([list(c.cv) for c in cells], dtype=float))

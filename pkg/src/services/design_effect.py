"""
Design effect components for two-stage designs

Self-representing threshold, SR/NSR partition of a stratum's PSUs, cluster design
effects (simple and with SR/NSR components), intraclass correlation from a frame or
from an observed design effect, and the estimator effect.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from schemas.errors import InfeasibleError, SchemaError
from schemas.records import PsuRecord
from utils.logger import get_logger
from utils.numeric import stable_sum

logger = get_logger(__name__)


def compute_threshold(minimum: float, delta: float, f: float) -> float:
    """
    Self-representing threshold lambda = minimum * delta / f

    Args:
        minimum: Minimum number of SSUs per selected PSU
        delta: Average number of elementary units per SSU (1 when they coincide)
        f: Stratum sampling fraction n_h / N_h

    Returns:
        Measure of size above which a PSU is self-representing
    """
    if f <= 0:
        raise InfeasibleError(f"sampling fraction must be positive to compute the threshold, got {f}")
    return minimum * delta / f


def split_sr_nsr(psus: Sequence[PsuRecord], threshold: float) -> Tuple[List[PsuRecord], List[PsuRecord]]:
    """
    Partition PSUs into self-representing (mos > threshold) and the rest

    A non-positive threshold marks the state before any sampling fraction is known and
    leaves every PSU non-self-representing.
    """
    if threshold <= 0:
        return [], list(psus)
    sr = [p for p in psus if p.mos > threshold]
    nsr = [p for p in psus if p.mos <= threshold]
    return sr, nsr


def deff_simple(rho: float, b: float) -> float:
    """Cluster design effect 1 + rho (b - 1)"""
    if b < 1:
        raise InfeasibleError(f"average cluster take must be >= 1, got {b}")
    return 1.0 + rho * (b - 1.0)


def deff_extended(
    N_sr: float,
    N_nsr: float,
    n_sr: float,
    n_nsr: float,
    rho_sr: float,
    rho_nsr: float,
    b_sr: float,
    b_nsr: float,
) -> float:
    """
    Design effect combining the SR and NSR parts of a stratum

        deff = [N_sr^2/n_sr (1 + rho_sr (b_sr - 1)) + N_nsr^2/n_nsr (1 + rho_nsr (b_nsr - 1))] / (N^2/n)

    with N = N_sr + N_nsr and n = n_sr + n_nsr. A part with no population contributes
    nothing, so N_sr = 0 gives deff_simple(rho_nsr, b_nsr).
    """
    if n_sr < 0 or n_nsr < 0:
        raise InfeasibleError("sample sizes must be non-negative")
    N = N_sr + N_nsr
    n = n_sr + n_nsr
    if N <= 0 or n <= 0:
        raise InfeasibleError("deff_extended needs a positive population and sample size")

    total = 0.0
    for N_part, n_part, rho, b in ((N_sr, n_sr, rho_sr, b_sr), (N_nsr, n_nsr, rho_nsr, b_nsr)):
        if N_part <= 0:
            continue
        if n_part <= 0:
            raise InfeasibleError("a part with population must receive a positive sample size")
        total += N_part**2 / n_part * deff_simple(rho, b)
    return total / (N**2 / n)


def rho_from_sample(deff: float, b: float) -> float:
    """Intraclass correlation implied by a design effect: (deff - 1) / (b - 1)"""
    if b <= 1:
        raise InfeasibleError(f"cannot recover rho with an average cluster take of {b}")
    return (deff - 1.0) / (b - 1.0)


def effst_compute(var_est: Sequence[float], var_ht: Sequence[float]) -> np.ndarray:
    """Estimator effect var(estimator) / var(Horvitz-Thompson), per variable"""
    est = np.asarray(var_est, dtype=float)
    ht = np.asarray(var_ht, dtype=float)
    if est.shape != ht.shape:
        raise SchemaError("variance vectors differ in length")
    if np.any(ht <= 0):
        raise InfeasibleError("Horvitz-Thompson variance must be positive to compute effst")
    return est / ht


def deviance_decomposition(
    values: Sequence[float], clusters: Sequence[object], weights: Optional[Sequence[float]] = None
) -> Tuple[float, float, float]:
    """
    Total, within-cluster and between-cluster deviance

    Returns:
        (D_y, D_w, D_b) with D_y = D_w + D_b up to rounding
    """
    frame = pd.DataFrame(
        {
            "y": np.asarray(values, dtype=float),
            "c": np.asarray(clusters, dtype=object),
            "w": np.ones(len(values)) if weights is None else np.asarray(weights, dtype=float),
        }
    )
    frame["wy"] = frame["w"] * frame["y"]
    grand_mean = stable_sum(frame["wy"]) / stable_sum(frame["w"])
    grouped = frame.groupby("c", sort=False)
    cluster_mean = grouped["wy"].transform("sum") / grouped["w"].transform("sum")

    d_y = stable_sum(frame["w"] * (frame["y"] - grand_mean) ** 2)
    d_w = stable_sum(frame["w"] * (frame["y"] - cluster_mean) ** 2)
    d_b = stable_sum(frame["w"] * (cluster_mean - grand_mean) ** 2)
    return d_y, d_w, d_b


def rho_within_stratum(
    values: Sequence[float], clusters: Sequence[object], weights: Optional[Sequence[float]] = None, label: str = ""
) -> float:
    """rho = 1 - D_w / D_y for one stratum, clipped to [0, 1]"""
    n_clusters = len(set(clusters))
    if n_clusters < 2:
        logger.warning(
            f"Fewer than two PSUs in {label or 'stratum'}; rho set to 0",
            extra={"extra_data": {"stratum": label, "psus": n_clusters}},
        )
        return 0.0
    d_y, d_w, _ = deviance_decomposition(values, clusters, weights)
    if d_y <= 0:
        logger.warning(
            f"Constant variable in {label or 'stratum'}; rho set to 0",
            extra={"extra_data": {"stratum": label}},
        )
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - d_w / d_y)))


def rho_from_population(
    frame: pd.DataFrame,
    target_vars: Sequence[str],
    psu_col: str,
    group_col: str,
    weight_col: Optional[str] = None,
) -> Dict[str, List[float]]:
    """
    Intraclass correlation of each target variable within each group of the frame

    Args:
        frame: Unit-level frame
        target_vars: Target variable columns
        psu_col: PSU identifier column
        group_col: Column defining the groups rho is computed in (strata or deff groups)
        weight_col: Optional unit weights

    Returns:
        Mapping group label -> rho per target variable
    """
    missing = [c for c in [*target_vars, psu_col, group_col] if c not in frame.columns]
    if missing:
        raise SchemaError(f"frame: missing column {missing[0]}")

    result: Dict[str, List[float]] = {}
    for group, rows in frame.groupby(group_col, sort=False):
        weights = None if weight_col is None else rows[weight_col].to_numpy(dtype=float)
        result[str(group)] = [
            rho_within_stratum(rows[var].to_numpy(dtype=float), rows[psu_col].to_numpy(), weights, label=str(group))
            for var in target_vars
        ]
    return result

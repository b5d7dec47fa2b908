"""
Allocation inputs from a unit-level sampling frame

Population moments per stratum (register) or weighted estimates from a previous survey,
intraclass correlations, and the strata / rho / deft / effst / PSU / design tables the
allocation reads. Variances use divisor N (sum of weights), so a binary target has
S^2 = p (1 - p).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from schemas import tables
from schemas.errors import SchemaError
from schemas.records import DesignParams, FactorRecord, PsuRecord, RhoRecord, StratumInfo
from services.design_effect import rho_from_population
from utils.logger import get_logger, log_stage
from utils.numeric import stable_sum

logger = get_logger(__name__)

NATIONAL_DOMAIN = "1"


def weighted_moments(values: np.ndarray, weights: np.ndarray, binary: bool = False) -> Tuple[float, float]:
    """
    Weighted mean and standard deviation with divisor sum(w)

    Binary targets use S^2 = p (1 - p); quantitative ones the centred weighted second moment.
    """
    total = stable_sum(weights)
    if total <= 0:
        raise SchemaError("weights must sum to a positive value")
    mean = stable_sum(weights * values) / total
    if binary:
        variance = mean * (1.0 - mean)
    else:
        variance = stable_sum(weights * (values - mean) ** 2) / total
    return mean, math.sqrt(max(variance, 0.0))


def _check_binary(frame: pd.DataFrame, column: str) -> None:
    values = frame[column].to_numpy(dtype=float)
    if not np.all(np.isin(values, (0.0, 1.0))):
        raise SchemaError(f"frame: binary target {column} has values outside {{0, 1}}")


def _numeric(frame: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    out = frame.copy()
    for col in columns:
        converted = pd.to_numeric(out[col], errors="coerce")
        if converted.isna().any():
            bad = out.loc[converted.isna(), col].iloc[0]
            raise SchemaError(f"frame: non-numeric value {bad!r} in column {col}")
        out[col] = converted.astype(float)
    return out


def _stratum_stats(
    frame: pd.DataFrame,
    strata_var: str,
    target: str,
    weight_var: Optional[str],
    binary: bool,
) -> pd.DataFrame:
    tables.require_columns(frame, [strata_var, target] + ([weight_var] if weight_var else []), "frame")
    data = _numeric(frame, [target] + ([weight_var] if weight_var else []))
    if binary:
        _check_binary(data, target)
    rows = []
    for stratum, group in data.groupby(strata_var, sort=False):
        values = group[target].to_numpy(dtype=float)
        weights = group[weight_var].to_numpy(dtype=float) if weight_var else np.ones(len(group))
        if weight_var and np.any(weights <= 0):
            raise SchemaError(f"frame: non-positive weight in stratum {stratum}")
        mean, sd = weighted_moments(values, weights, binary)
        rows.append({"STRATUM": str(stratum), "N": len(group), "MEAN": mean, "STDEV": sd})
    return pd.DataFrame(rows, columns=["STRATUM", "N", "MEAN", "STDEV"])


def stratum_stats_register(frame: pd.DataFrame, strata_var: str, target: str, binary: bool = False) -> pd.DataFrame:
    """Population mean and standard deviation of ``target`` per stratum (STRATUM, N, MEAN, STDEV)"""
    return _stratum_stats(frame, strata_var, target, None, binary)


def stratum_stats_survey(
    frame: pd.DataFrame, strata_var: str, target: str, weight_var: str, binary: bool = False
) -> pd.DataFrame:
    """Weighted estimates of the stratum mean and standard deviation from survey data"""
    return _stratum_stats(frame, strata_var, target, weight_var, binary)


@dataclass
class PreparedInputs:
    """Tables ready to be written as allocation inputs"""

    strata: pd.DataFrame
    rho: pd.DataFrame
    deff: pd.DataFrame
    deft: pd.DataFrame
    effst: pd.DataFrame
    psu: pd.DataFrame
    des: pd.DataFrame
    single_unit_strata: List[str] = field(default_factory=list)

    def as_dict(self) -> Dict[str, pd.DataFrame]:
        return {
            "strata": self.strata,
            "rho": self.rho,
            "deff": self.deff,
            "deft": self.deft,
            "effst": self.effst,
            "psu": self.psu,
            "des": self.des,
        }


def _constant_within(frame: pd.DataFrame, key: str, column: str) -> Dict[str, str]:
    counts = frame.groupby(key, sort=False)[column].nunique()
    if (counts > 1).any():
        offender = counts[counts > 1].index[0]
        raise SchemaError(f"frame: {column} is not constant within {key} {offender!r}")
    first = frame.groupby(key, sort=False)[column].first()
    return {str(k): str(v) for k, v in first.items()}


def prepare_inputs_scenario1(
    frame: pd.DataFrame,
    id_psu: str,
    id_ssu: str,
    strata_var: str,
    target_vars: Sequence[str],
    deff_var: Optional[str] = None,
    domain_vars: Sequence[str] = (),
    delta: float = 1.0,
    minimum: int = 50,
    deff_sugg: Optional[float] = None,
    deff_sugg_as_start: bool = False,
    binary_vars: Sequence[str] = (),
) -> PreparedInputs:
    """
    Build every allocation input table from a population frame

    Args:
        frame: Unit-level frame
        id_psu: PSU identifier column
        id_ssu: Unit identifier column
        strata_var: Stratum column
        target_vars: Target variable columns
        deff_var: Column grouping strata for rho (defaults to strata_var)
        domain_vars: Columns giving DOM2, DOM3, ... (DOM1 is the whole population)
        delta: DELTA for every stratum
        minimum: MINIMUM for every stratum
        deff_sugg: Suggested design effect written to the deff table
        deff_sugg_as_start: Write sqrt(deff_sugg) as the starting deft
        binary_vars: Targets that must be 0/1

    Returns:
        PreparedInputs
    """
    required = [id_psu, id_ssu, strata_var, *target_vars, *domain_vars] + ([deff_var] if deff_var else [])
    tables.require_columns(frame, required, "frame")
    if not target_vars:
        raise SchemaError("at least one target variable is required")
    unknown_binary = [b for b in binary_vars if b not in target_vars]
    if unknown_binary:
        raise SchemaError(f"binary variable {unknown_binary[0]} is not a target variable")
    if frame[id_ssu].duplicated().any():
        raise SchemaError(f"frame: duplicate unit identifiers in {id_ssu}")

    log_stage(logger, "prepare", units=len(frame), targets=list(target_vars))
    data = frame.copy()
    data[strata_var] = data[strata_var].astype(str)
    data[id_psu] = data[id_psu].astype(str)

    stats = {
        var: stratum_stats_register(data, strata_var, var, binary=var in binary_vars).set_index("STRATUM")
        for var in target_vars
    }
    strata_ids = list(stats[target_vars[0]].index)
    domain_labels = {var: _constant_within(data, strata_var, var) for var in domain_vars}

    strata = []
    for sid in strata_ids:
        domains = {"DOM1": NATIONAL_DOMAIN}
        for k, var in enumerate(domain_vars, start=2):
            domains[f"DOM{k}"] = domain_labels[var][sid]
        strata.append(
            StratumInfo(
                stratum_id=sid,
                N=int(stats[target_vars[0]].loc[sid, "N"]),
                means=[float(stats[v].loc[sid, "MEAN"]) for v in target_vars],
                stdevs=[float(stats[v].loc[sid, "STDEV"]) for v in target_vars],
                domains=domains,
            )
        )

    stratum_of_psu = _constant_within(data, id_psu, strata_var)
    mos = data.groupby(id_psu, sort=False).size()
    psus = [PsuRecord(psu_id=str(p), stratum_id=stratum_of_psu[str(p)], mos=int(m)) for p, m in mos.items()]
    mos_by_stratum: Dict[str, int] = {}
    for p in psus:
        mos_by_stratum[p.stratum_id] = mos_by_stratum.get(p.stratum_id, 0) + p.mos
    design = [
        DesignParams(stratum_id=sid, delta=delta, minimum=minimum, stratum_mos=mos_by_stratum[sid]) for sid in strata_ids
    ]

    group_var = deff_var or strata_var
    data = _numeric(data, target_vars)
    rho_by_group = rho_from_population(data, target_vars, id_psu, group_var)
    group_of_stratum = _constant_within(data, strata_var, group_var) if deff_var else {s: s for s in strata_ids}
    rho = [
        RhoRecord(
            stratum_id=sid,
            rho_sr=[1.0] * len(target_vars),
            rho_nsr=[min(r, 1.0) for r in rho_by_group[group_of_stratum[sid]]],
        )
        for sid in strata_ids
    ]

    J = len(target_vars)
    suggested = 1.0 if deff_sugg is None else float(deff_sugg)
    start = math.sqrt(suggested) if deff_sugg_as_start else 1.0
    deff = pd.DataFrame({"STRATUM": strata_ids, **{f"DEFF{j + 1}": suggested for j in range(J)}})
    deft = [FactorRecord(stratum_id=sid, values=[start] * J) for sid in strata_ids]
    effst = [FactorRecord(stratum_id=sid, values=[1.0] * J) for sid in strata_ids]

    single = [s.stratum_id for s in strata if s.N == 1]
    logger.info(
        f"Prepared {len(strata)} strata, of which with only one unit: {len(single)}; {len(psus)} PSUs",
        extra={"extra_data": {"strata": len(strata), "single_unit": single, "psus": len(psus)}},
    )
    return PreparedInputs(
        strata=tables.strata_to_frame(strata),
        rho=tables.rho_to_frame(rho),
        deff=deff,
        deft=tables.factors_to_frame(deft, "DEFT"),
        effst=tables.factors_to_frame(effst, "EFFST"),
        psu=tables.psus_to_frame(psus),
        des=tables.design_to_frame(design),
        single_unit_strata=single,
    )

"""
Input coherence checks

- check_input: strata population sizes against the PSU measures of size
- validate_domains: resolve constraint rows to whole-stratum domain categories
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from schemas.errors import DanglingReferenceError, SchemaError
from schemas.records import DesignParams, PrecisionConstraint, PsuRecord, StratumInfo
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class DomainCell:
    """One domain category carrying CV bounds, resolved to its member strata"""

    domain_type: str
    category: str
    cv: Tuple[float, ...]
    members: np.ndarray  # boolean mask over strata, in strata order

    @property
    def label(self) -> str:
        return f"{self.domain_type}={self.category}"


def check_input(
    strata: Sequence[StratumInfo], design: Sequence[DesignParams], psus: Sequence[PsuRecord]
) -> Tuple[pd.DataFrame, List[StratumInfo]]:
    """
    Compare each stratum's N with the total measure of size of its PSUs

    Args:
        strata: Strata as read from the strata file
        design: Design parameters (must cover every stratum)
        psus: PSU list

    Returns:
        (report, corrected) where report has one row per stratum with columns STRATUM,
        N_STRATA, N_PSU, DIFFERENCE (N_PSU - N_STRATA), PSU_COUNT, STRAT_MOS and corrected
        carries N := N_PSU
    """
    mos_by_stratum: Dict[str, int] = {}
    count_by_stratum: Dict[str, int] = {}
    known = {s.stratum_id for s in strata}
    for psu in psus:
        if psu.stratum_id not in known:
            raise DanglingReferenceError(f"PSU {psu.psu_id!r} refers to unknown stratum {psu.stratum_id!r}")
        mos_by_stratum[psu.stratum_id] = mos_by_stratum.get(psu.stratum_id, 0) + psu.mos
        count_by_stratum[psu.stratum_id] = count_by_stratum.get(psu.stratum_id, 0) + 1

    design_by_stratum = {d.stratum_id: d for d in design}
    rows = []
    corrected = []
    for stratum in strata:
        if stratum.stratum_id not in mos_by_stratum:
            raise DanglingReferenceError(f"stratum {stratum.stratum_id!r} has no PSUs in the PSU file")
        if stratum.stratum_id not in design_by_stratum:
            raise DanglingReferenceError(f"stratum {stratum.stratum_id!r} has no row in the design file")
        n_psu = mos_by_stratum[stratum.stratum_id]
        difference = n_psu - stratum.N
        rows.append(
            {
                "STRATUM": stratum.stratum_id,
                "N_STRATA": stratum.N,
                "N_PSU": n_psu,
                "DIFFERENCE": difference,
                "PSU_COUNT": count_by_stratum[stratum.stratum_id],
                "STRAT_MOS": design_by_stratum[stratum.stratum_id].stratum_mos,
            }
        )
        if difference != 0:
            logger.warning(
                f"Stratum {stratum.stratum_id}: N={stratum.N} but PSUs sum to {n_psu}; using the PSU total",
                extra={"extra_data": {"stratum": stratum.stratum_id, "difference": difference}},
            )
        corrected.append(stratum.model_copy(update={"N": n_psu}))

    report = pd.DataFrame(rows, columns=["STRATUM", "N_STRATA", "N_PSU", "DIFFERENCE", "PSU_COUNT", "STRAT_MOS"])
    logger.info(
        f"check_input: {len(strata)} strata, {int((report['DIFFERENCE'] != 0).sum())} with discrepancies",
        extra={"extra_data": {"total_difference": int(report["DIFFERENCE"].sum())}},
    )
    return report, corrected


def check_variable_arity(strata: Sequence[StratumInfo], constraints: Sequence[PrecisionConstraint]) -> int:
    """Every stratum and constraint row must describe the same J target variables"""
    if not strata:
        raise SchemaError("strata table is empty")
    n_variables = strata[0].n_variables
    for s in strata:
        if s.n_variables != n_variables:
            raise SchemaError(f"stratum {s.stratum_id!r} has {s.n_variables} variables, expected {n_variables}")
    for c in constraints:
        if len(c.cv) != n_variables:
            raise SchemaError(f"constraint {c.domain!r} has {len(c.cv)} CV bounds, expected {n_variables}")
    return n_variables


def validate_domains(
    strata: Sequence[StratumInfo], constraints: Sequence[PrecisionConstraint]
) -> List[DomainCell]:
    """
    Resolve constraint rows into domain categories made of whole strata

    A constraint row's DOM value is either a domain type (a DOMk column name, in which
    case the bounds apply to every category of that type) or a category label that
    appears in exactly one DOMk column.

    Returns:
        One DomainCell per constrained category; raises on any inconsistency
    """
    check_variable_arity(strata, constraints)
    if not constraints:
        raise SchemaError("no precision constraints given")

    domain_types = list(strata[0].domains.keys())
    if "DOM1" not in domain_types:
        raise SchemaError("strata must carry at least the DOM1 domain column")
    for s in strata:
        if list(s.domains.keys()) != domain_types:
            raise SchemaError(f"stratum {s.stratum_id!r} does not carry the domain columns {domain_types}")
        for dom_type, label in s.domains.items():
            if not label:
                raise SchemaError(f"stratum {s.stratum_id!r} has an empty {dom_type} label")

    labels = {t: np.array([s.domains[t] for s in strata], dtype=object) for t in domain_types}
    cells: List[DomainCell] = []
    for constraint in constraints:
        cv = tuple(constraint.cv)
        if constraint.domain in labels:
            dom_type = constraint.domain
            for category in _ordered_unique(labels[dom_type]):
                cells.append(DomainCell(dom_type, category, cv, labels[dom_type] == category))
            continue

        matches = [t for t in domain_types if constraint.domain in set(labels[t])]
        if not matches:
            raise DanglingReferenceError(f"no stratum belongs to domain category {constraint.domain!r}")
        if len(matches) > 1:
            raise SchemaError(f"domain category {constraint.domain!r} is ambiguous across {matches}")
        dom_type = matches[0]
        cells.append(DomainCell(dom_type, constraint.domain, cv, labels[dom_type] == constraint.domain))

    seen = set()
    for cell in cells:
        if cell.label in seen:
            raise SchemaError(f"domain category {cell.label} is constrained twice")
        seen.add(cell.label)
    return cells


def _ordered_unique(values) -> List[str]:
    return list(dict.fromkeys(str(v) for v in values))

"""
CSV column conventions

Column names follow the layout used by published allocation datasets (STRATUM, N, M1..MJ,
S1..SJ, COST, CENS, DOM1..DOMk, CV1..CVJ, PSU_ID, PSU_MOS, DELTA, MINIMUM, RHO_AR*,
RHO_NAR*, DEFT*, EFFST*) so those files load unchanged. The converters here work on
string-typed DataFrames and turn each row into a validated record.
"""

import math
import re
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from pydantic import ValidationError

from schemas.errors import DanglingReferenceError, ParseError, SchemaError
from schemas.records import (
    DesignParams,
    FactorRecord,
    PrecisionConstraint,
    PsuRecord,
    RhoRecord,
    StratumInfo,
)

T = TypeVar("T")

STRATUM = "STRATUM"
DOMAIN = "DOM"
PSU_ID = "PSU_ID"
PSU_MOS = "PSU_MOS"


def indexed_columns(columns: Sequence[str], prefix: str) -> List[str]:
    """Columns named ``<prefix><k>`` ordered by k (M1, M2, ... / DOM1, DOM2, ...)"""
    pattern = re.compile(rf"^{re.escape(prefix)}(\d+)$")
    found = []
    for col in columns:
        match = pattern.match(str(col))
        if match:
            found.append((int(match.group(1)), str(col)))
    return [col for _, col in sorted(found)]


def require_columns(df: pd.DataFrame, columns: Sequence[str], table: str) -> None:
    for col in columns:
        if col not in df.columns:
            raise SchemaError(f"{table}: missing column {col}")


def parse_float(value, row: int, column: str) -> float:
    """Parse a numeric cell; ``row`` is the 1-based line number in the file"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        raise ParseError("empty numeric cell", row=row, column=column)
    try:
        parsed = float(str(value).strip())
    except ValueError:
        raise ParseError(f"non-numeric value {value!r}", row=row, column=column) from None
    if math.isnan(parsed) or math.isinf(parsed):
        raise ParseError(f"non-finite value {value!r}", row=row, column=column)
    return parsed


def _cell_text(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return str(value).strip()


def _build(table: str, row: int, factory: Callable[..., T], **kwargs) -> T:
    try:
        return factory(**kwargs)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(part) for part in first.get("loc", ()))
        detail = first.get("msg", str(exc))
        raise SchemaError(f"{table}: row {row}: {loc + ': ' if loc else ''}{detail}") from None


def _rows(df: pd.DataFrame):
    # header is line 1 of the file
    for offset, (_, record) in enumerate(df.iterrows()):
        yield offset + 2, record


# ============================================================================
# Strata
# ============================================================================


def strata_from_frame(df: pd.DataFrame) -> List[StratumInfo]:
    """STRATUM, N, M1..MJ, S1..SJ, [COST], [CENS], DOM1..DOMk"""
    table = "strata"
    require_columns(df, [STRATUM, "N"], table)
    mean_cols = indexed_columns(df.columns, "M")
    sd_cols = indexed_columns(df.columns, "S")
    dom_cols = indexed_columns(df.columns, "DOM")
    if not mean_cols:
        raise SchemaError(f"{table}: missing column M1")
    if not sd_cols:
        raise SchemaError(f"{table}: missing column S1")
    if len(mean_cols) != len(sd_cols):
        raise SchemaError(f"{table}: mean/stdev arity mismatch ({len(mean_cols)} means, {len(sd_cols)} stdevs)")
    if not dom_cols:
        raise SchemaError(f"{table}: missing column DOM1")

    strata = []
    for row, record in _rows(df):
        strata.append(
            _build(
                table,
                row,
                StratumInfo,
                stratum_id=_cell_text(record[STRATUM]),
                N=parse_float(record["N"], row, "N"),
                means=[parse_float(record[c], row, c) for c in mean_cols],
                stdevs=[parse_float(record[c], row, c) for c in sd_cols],
                cost=parse_float(record["COST"], row, "COST") if "COST" in df.columns else 1.0,
                cens=bool(parse_float(record["CENS"], row, "CENS")) if "CENS" in df.columns else False,
                domains={c: _cell_text(record[c]) for c in dom_cols},
            )
        )
    _check_unique([s.stratum_id for s in strata], table, STRATUM)
    return strata


def strata_to_frame(strata: Sequence[StratumInfo]) -> pd.DataFrame:
    rows = []
    for s in strata:
        row: Dict[str, object] = {STRATUM: s.stratum_id, "N": s.N}
        row.update({f"M{j + 1}": m for j, m in enumerate(s.means)})
        row.update({f"S{j + 1}": sd for j, sd in enumerate(s.stdevs)})
        row["COST"] = s.cost
        row["CENS"] = int(s.cens)
        row.update(s.domains)
        rows.append(row)
    return pd.DataFrame(rows)


# ============================================================================
# Precision constraints
# ============================================================================


def constraints_from_frame(df: pd.DataFrame) -> List[PrecisionConstraint]:
    """DOM, CV1..CVJ"""
    table = "errors"
    require_columns(df, [DOMAIN], table)
    cv_cols = indexed_columns(df.columns, "CV")
    if not cv_cols:
        raise SchemaError(f"{table}: missing column CV1")
    constraints = [
        _build(
            table,
            row,
            PrecisionConstraint,
            domain=_cell_text(record[DOMAIN]),
            cv=[parse_float(record[c], row, c) for c in cv_cols],
        )
        for row, record in _rows(df)
    ]
    _check_unique([c.domain for c in constraints], table, DOMAIN)
    return constraints


def constraints_to_frame(constraints: Sequence[PrecisionConstraint]) -> pd.DataFrame:
    rows = []
    for c in constraints:
        row: Dict[str, object] = {DOMAIN: c.domain}
        row.update({f"CV{j + 1}": v for j, v in enumerate(c.cv)})
        rows.append(row)
    return pd.DataFrame(rows)


# ============================================================================
# PSUs and design parameters
# ============================================================================


def psus_from_frame(df: pd.DataFrame) -> List[PsuRecord]:
    """PSU_ID, STRATUM, PSU_MOS"""
    table = "psu"
    require_columns(df, [PSU_ID, STRATUM, PSU_MOS], table)
    psus = [
        _build(
            table,
            row,
            PsuRecord,
            psu_id=_cell_text(record[PSU_ID]),
            stratum_id=_cell_text(record[STRATUM]),
            mos=parse_float(record[PSU_MOS], row, PSU_MOS),
        )
        for row, record in _rows(df)
    ]
    _check_unique([p.psu_id for p in psus], table, PSU_ID)
    return psus


def psus_to_frame(psus: Sequence[PsuRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            PSU_ID: [p.psu_id for p in psus],
            STRATUM: [p.stratum_id for p in psus],
            PSU_MOS: [p.mos for p in psus],
        },
        columns=[PSU_ID, STRATUM, PSU_MOS],
    )


def design_from_frame(df: pd.DataFrame) -> List[DesignParams]:
    """STRATUM, [STRAT_MOS], DELTA, MINIMUM"""
    table = "des"
    require_columns(df, [STRATUM, "DELTA", "MINIMUM"], table)
    design = [
        _build(
            table,
            row,
            DesignParams,
            stratum_id=_cell_text(record[STRATUM]),
            delta=parse_float(record["DELTA"], row, "DELTA"),
            minimum=parse_float(record["MINIMUM"], row, "MINIMUM"),
            stratum_mos=parse_float(record["STRAT_MOS"], row, "STRAT_MOS") if "STRAT_MOS" in df.columns else None,
        )
        for row, record in _rows(df)
    ]
    _check_unique([d.stratum_id for d in design], table, STRATUM)
    return design


def design_to_frame(design: Sequence[DesignParams]) -> pd.DataFrame:
    rows = []
    for d in design:
        row: Dict[str, object] = {STRATUM: d.stratum_id}
        if d.stratum_mos is not None:
            row["STRAT_MOS"] = d.stratum_mos
        row["DELTA"] = d.delta
        row["MINIMUM"] = d.minimum
        rows.append(row)
    return pd.DataFrame(rows)


# ============================================================================
# rho / deft / effst
# ============================================================================


def rho_from_frame(df: pd.DataFrame) -> List[RhoRecord]:
    """STRATUM, RHO_AR1..J, RHO_NAR1..J"""
    table = "rho"
    require_columns(df, [STRATUM], table)
    sr_cols = indexed_columns(df.columns, "RHO_AR")
    nsr_cols = indexed_columns(df.columns, "RHO_NAR")
    if not nsr_cols:
        raise SchemaError(f"{table}: missing column RHO_NAR1")
    if sr_cols and len(sr_cols) != len(nsr_cols):
        raise SchemaError(f"{table}: RHO_AR/RHO_NAR arity mismatch")
    records = []
    for row, record in _rows(df):
        nsr = [parse_float(record[c], row, c) for c in nsr_cols]
        sr = [parse_float(record[c], row, c) for c in sr_cols] if sr_cols else [1.0] * len(nsr)
        records.append(_build(table, row, RhoRecord, stratum_id=_cell_text(record[STRATUM]), rho_sr=sr, rho_nsr=nsr))
    _check_unique([r.stratum_id for r in records], table, STRATUM)
    return records


def rho_to_frame(records: Sequence[RhoRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        row: Dict[str, object] = {STRATUM: r.stratum_id}
        for j, (sr, nsr) in enumerate(zip(r.rho_sr, r.rho_nsr)):
            row[f"RHO_AR{j + 1}"] = sr
            row[f"RHO_NAR{j + 1}"] = nsr
        rows.append(row)
    return pd.DataFrame(rows)


def factors_from_frame(df: pd.DataFrame, prefix: str) -> List[FactorRecord]:
    """STRATUM, <prefix>1..J for prefix DEFT or EFFST"""
    table = prefix.lower()
    require_columns(df, [STRATUM], table)
    cols = indexed_columns(df.columns, prefix)
    if not cols:
        raise SchemaError(f"{table}: missing column {prefix}1")
    records = [
        _build(
            table,
            row,
            FactorRecord,
            stratum_id=_cell_text(record[STRATUM]),
            values=[parse_float(record[c], row, c) for c in cols],
        )
        for row, record in _rows(df)
    ]
    _check_unique([r.stratum_id for r in records], table, STRATUM)
    return records


def factors_to_frame(records: Sequence[FactorRecord], prefix: str) -> pd.DataFrame:
    rows = []
    for r in records:
        row: Dict[str, object] = {STRATUM: r.stratum_id}
        row.update({f"{prefix}{j + 1}": v for j, v in enumerate(r.values)})
        rows.append(row)
    return pd.DataFrame(rows)


def _check_unique(values: Sequence[str], table: str, column: str) -> None:
    seen = set()
    for v in values:
        if v in seen:
            raise SchemaError(f"{table}: duplicate {column} {v!r}")
        seen.add(v)


def factor_matrix(records: Optional[Sequence[FactorRecord]], strata_ids: Sequence[str], n_variables: int):
    """Align per-stratum factors with ``strata_ids``; missing table means all ones"""
    matrix = np.ones((len(strata_ids), n_variables))
    if records is None:
        return matrix
    by_id = {r.stratum_id: r for r in records}
    for h, sid in enumerate(strata_ids):
        if sid not in by_id:
            raise DanglingReferenceError(f"factor table has no row for stratum {sid!r}")
        values = by_id[sid].values
        if len(values) != n_variables:
            raise SchemaError(f"factor table arity {len(values)} differs from {n_variables} target variables")
        matrix[h, :] = values
    return matrix


# ============================================================================
# Allocation results read back for selection
# ============================================================================


def _parse_count(record, row: int, column: str) -> int:
    value = parse_float(record[column], row, column)
    if value != round(value) or value < 0:
        raise ParseError(f"{column} must be a non-negative integer, got {record[column]!r}", row=row, column=column)
    return int(round(value))


def alloc2_from_frame(df: pd.DataFrame) -> Tuple[List[str], List[int], List[float], Optional[List[int]]]:
    """STRATUM, SSU, THRESHOLD and, when present, PSU_NSR columns of alloc2.csv"""
    table = "alloc2"
    require_columns(df, [STRATUM, "SSU", "THRESHOLD"], table)
    has_nsr = "PSU_NSR" in df.columns
    ids, n_ssu, thresholds, psu_nsr = [], [], [], []
    for row, record in _rows(df):
        ids.append(_cell_text(record[STRATUM]))
        n_ssu.append(_parse_count(record, row, "SSU"))
        thresholds.append(parse_float(record["THRESHOLD"], row, "THRESHOLD"))
        if has_nsr:
            psu_nsr.append(_parse_count(record, row, "PSU_NSR"))
    _check_unique(ids, table, STRATUM)
    return ids, n_ssu, thresholds, (psu_nsr if has_nsr else None)

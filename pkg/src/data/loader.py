"""
CSV input/output for SurveyAlloc

All interchange goes through UTF-8, comma-separated CSV files with a header row and '.'
as decimal separator.
"""

from pathlib import Path
from typing import Optional, Sequence, Union

import pandas as pd

from data.validation import check_variable_arity
from schemas import tables
from schemas.errors import DanglingReferenceError, InputFileError, SchemaError
from schemas.records import InputBundle
from utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]


def read_table(path: PathLike) -> pd.DataFrame:
    """Read a CSV file keeping every cell as text"""
    path = Path(path)
    if not path.is_file():
        raise InputFileError(str(path))
    try:
        df = pd.read_csv(path, dtype=str, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: file is empty") from None
    except (UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise SchemaError(f"{path}: cannot parse CSV ({exc})") from None
    df.columns = [str(c).strip() for c in df.columns]
    logger.debug(f"Read {len(df)} rows from {path}")
    return df


def write_table(df: pd.DataFrame, path: PathLike, float_format: Optional[str] = None) -> Path:
    """Write a CSV file (no index, '\\n' line endings)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=float_format, lineterminator="\n", encoding="utf-8")
    logger.debug(f"Wrote {len(df)} rows to {path}")
    return path


def load_inputs(
    strata: PathLike,
    errors: PathLike,
    psu: Optional[PathLike] = None,
    des: Optional[PathLike] = None,
    rho: Optional[PathLike] = None,
    deft: Optional[PathLike] = None,
    effst: Optional[PathLike] = None,
) -> InputBundle:
    """
    Load and cross-check the allocation inputs

    Args:
        strata: Strata file (STRATUM, N, M*, S*, COST, CENS, DOM*)
        errors: Precision constraints (DOM, CV*)
        psu: PSU file (PSU_ID, STRATUM, PSU_MOS)
        des: Design parameters (STRATUM, DELTA, MINIMUM)
        rho: Intraclass correlations (STRATUM, RHO_AR*, RHO_NAR*)
        deft: Starting deft values (STRATUM, DEFT*)
        effst: Estimator effects (STRATUM, EFFST*)

    Returns:
        InputBundle with validated records and resolved references
    """
    bundle = InputBundle(
        strata=tables.strata_from_frame(read_table(strata)),
        constraints=tables.constraints_from_frame(read_table(errors)),
    )
    if psu is not None:
        bundle.psus = tables.psus_from_frame(read_table(psu))
    if des is not None:
        bundle.design = tables.design_from_frame(read_table(des))
    if rho is not None:
        bundle.rho = tables.rho_from_frame(read_table(rho))
    if deft is not None:
        bundle.deft = tables.factors_from_frame(read_table(deft), "DEFT")
    if effst is not None:
        bundle.effst = tables.factors_from_frame(read_table(effst), "EFFST")

    resolve_references(bundle)
    logger.info(
        f"Loaded {len(bundle.strata)} strata, {len(bundle.constraints)} constraint rows, {len(bundle.psus)} PSUs",
        extra={"extra_data": {"variables": bundle.n_variables}},
    )
    return bundle


def resolve_references(bundle: InputBundle) -> None:
    """Check that every table refers to known strata and the same number of variables"""
    n_variables = check_variable_arity(bundle.strata, bundle.constraints)
    known = {s.stratum_id for s in bundle.strata}

    for record in bundle.psus:
        if record.stratum_id not in known:
            raise DanglingReferenceError(f"PSU {record.psu_id!r} refers to unknown stratum {record.stratum_id!r}")

    _check_coverage("des", [d.stratum_id for d in bundle.design], known)
    _check_coverage("rho", [r.stratum_id for r in bundle.rho], known)
    for record in bundle.rho:
        if len(record.rho_nsr) != n_variables:
            raise SchemaError(f"rho: stratum {record.stratum_id!r} has {len(record.rho_nsr)} variables")
    for name, records in (("deft", bundle.deft), ("effst", bundle.effst)):
        if records is None:
            continue
        _check_coverage(name, [r.stratum_id for r in records], known)
        for record in records:
            if len(record.values) != n_variables:
                raise SchemaError(f"{name}: stratum {record.stratum_id!r} has {len(record.values)} variables")


def _check_coverage(table: str, ids: Sequence[str], known: set) -> None:
    if not ids:
        return
    for sid in ids:
        if sid not in known:
            raise DanglingReferenceError(f"{table}: unknown stratum {sid!r}")
    missing = known - set(ids)
    if missing:
        raise DanglingReferenceError(f"{table}: no row for strata {sorted(missing)}")

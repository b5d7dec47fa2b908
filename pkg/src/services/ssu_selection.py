"""
Second-stage selection: systematic sampling of SSUs inside each selected PSU
"""

from typing import Dict, Optional

import numpy as np
import pandas as pd

from schemas.errors import DanglingReferenceError, SchemaError
from schemas.tables import require_columns
from utils.logger import get_logger
from utils.random_streams import SeedLike, as_rng, derive_rng

logger = get_logger(__name__)

PROBABILITY_COLUMNS = ["PROB_1ST", "PROB_2ST", "PROB_FINAL", "WEIGHT"]


def psu_unit_index(frame: pd.DataFrame, psu_col: str) -> Dict[str, np.ndarray]:
    """Row positions of each PSU's units, in frame order"""
    labels = frame[psu_col].astype(str).to_numpy()
    return {str(k): np.asarray(v) for k, v in pd.Series(np.arange(len(labels))).groupby(labels).groups.items()}


def systematic_positions(population: int, k: int, seed: SeedLike) -> np.ndarray:
    """
    k positions out of range(population) with a fractional step

    step = population / k, start u uniform in [0, step), positions floor(u + i * step).
    """
    if k <= 0:
        return np.zeros(0, dtype=int)
    if k > population:
        raise SchemaError(f"cannot select {k} units out of {population}")
    step = population / k
    u = as_rng(seed).uniform(0.0, step)
    positions = np.floor(u + np.arange(k) * step).astype(int)
    return np.minimum(positions, population - 1)


def select_ssu(
    frame: pd.DataFrame,
    sample_psu: pd.DataFrame,
    seed: int,
    psu_col: str = "PSU_ID",
    unit_index: Optional[Dict[str, np.ndarray]] = None,
) -> pd.DataFrame:
    """
    Select SSUs in every PSU of the first-stage sample

    Args:
        frame: Unit-level frame
        sample_psu: sample_PSU table (PSU_ID, Pik, PSU_final_sample_unit)
        seed: Master seed; each PSU uses the stream (seed, "ssu", PSU id)
        psu_col: PSU identifier column of the frame
        unit_index: Precomputed psu_unit_index of the frame

    Returns:
        Selected frame rows with PROB_1ST, PROB_2ST, PROB_FINAL and WEIGHT appended
    """
    require_columns(frame, [psu_col], "frame")
    require_columns(sample_psu, ["PSU_ID", "Pik", "PSU_final_sample_unit"], "sample_PSU")
    index = psu_unit_index(frame, psu_col) if unit_index is None else unit_index

    positions = []
    prob_1st = []
    prob_2nd = []
    weight_2nd = []
    ordered = sample_psu.assign(_key=sample_psu["PSU_ID"].astype(str)).sort_values(["_key"], kind="stable")
    for psu_id, pik, quota in zip(ordered["_key"], ordered["Pik"], ordered["PSU_final_sample_unit"]):
        units = index.get(psu_id)
        if units is None:
            raise DanglingReferenceError(f"selected PSU {psu_id!r} is not in the frame")
        M = len(units)
        k = int(round(float(quota)))
        if k > M:
            logger.warning(
                f"PSU {psu_id}: {k} SSUs requested but only {M} units; taking all",
                extra={"extra_data": {"psu": psu_id, "requested": k, "available": M}},
            )
            k = M
        chosen = units[systematic_positions(M, k, derive_rng(seed, "ssu", psu_id))]
        positions.append(chosen)
        prob_1st.append(np.full(k, float(pik)))
        prob_2nd.append(np.full(k, k / M))
        weight_2nd.append(np.full(k, M / k if k else 0.0))

    rows = np.concatenate(positions) if positions else np.zeros(0, dtype=int)
    sample = frame.iloc[rows].reset_index(drop=True)
    p1 = np.concatenate(prob_1st) if prob_1st else np.zeros(0)
    p2 = np.concatenate(prob_2nd) if prob_2nd else np.zeros(0)
    sample["PROB_1ST"] = p1
    sample["PROB_2ST"] = p2
    sample["PROB_FINAL"] = p1 * p2
    sample["WEIGHT"] = (1.0 / p1) * (np.concatenate(weight_2nd) if weight_2nd else np.zeros(0))
    logger.debug(
        f"Selected {len(sample)} SSUs in {len(ordered)} PSUs",
        extra={"extra_data": {"ssus": len(sample), "psus": len(ordered)}},
    )
    return sample


"""
Synthetic population frames

Strata of PSUs with log-normally spread sizes; targets are generated with a PSU-level
random effect so their intraclass correlation can be controlled. Binary targets pass
the effect through a logistic link.
"""

from typing import List, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from utils.logger import get_logger
from utils.numeric import largest_remainder
from utils.random_streams import derive_rng

logger = get_logger(__name__)


class TargetModel(BaseModel):
    """Generating model of one target variable"""

    name: str
    kind: Literal["binary", "quantitative"] = "quantitative"
    base: float = Field(description="Mean (quantitative) or probability (binary)")
    stratum_sd: float = Field(default=0.0, ge=0)
    psu_sd: float = Field(default=0.0, ge=0)
    noise_sd: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def validate_probability(self):
        if self.kind == "binary" and not (0 < self.base < 1):
            raise ValueError("binary base probability must lie in (0, 1)")
        return self


class StratumSpec(BaseModel):
    """Size and labels of one synthetic stratum"""

    stratum_id: str
    region: str = "R1"
    n_psus: int = Field(gt=0)
    units: int = Field(gt=0)

    @model_validator(mode="after")
    def validate_units(self):
        if self.units < self.n_psus:
            raise ValueError("every PSU needs at least one unit")
        return self


class FrameSpec(BaseModel):
    """Complete description of a synthetic frame"""

    strata: List[StratumSpec]
    targets: List[TargetModel]
    psu_size_sigma: float = Field(default=0.5, ge=0)


def _psu_sizes(rng: np.random.Generator, n_psus: int, units: int, sigma: float) -> List[int]:
    spread = rng.lognormal(mean=0.0, sigma=sigma, size=n_psus) if sigma > 0 else np.ones(n_psus)
    # one unit per PSU up front, the rest shared by size
    extra = largest_remainder(spread, units - n_psus) if units > n_psus else [0] * n_psus
    return [1 + e for e in extra]


def synth_frame(spec: FrameSpec, seed: int) -> pd.DataFrame:
    """
    Generate a frame with UNIT_ID, PSU_ID, STRATUM, REGION and one column per target

    Args:
        spec: Frame description
        seed: Master seed; each stratum draws from its own derived stream

    Returns:
        DataFrame in stratum, PSU, unit order
    """
    pieces = []
    for stratum in spec.strata:
        rng = derive_rng(seed, "synth", stratum.stratum_id)
        sizes = _psu_sizes(rng, stratum.n_psus, stratum.units, spec.psu_size_sigma)
        psu_ids = [f"{stratum.stratum_id}_P{k + 1:03d}" for k in range(stratum.n_psus)]
        psu_of_unit = np.repeat(np.arange(stratum.n_psus), sizes)
        part = pd.DataFrame(
            {
                "PSU_ID": np.array(psu_ids, dtype=object)[psu_of_unit],
                "STRATUM": stratum.stratum_id,
                "REGION": stratum.region,
            }
        )
        for target in spec.targets:
            shift = rng.normal(0.0, target.stratum_sd) if target.stratum_sd > 0 else 0.0
            effect = rng.normal(0.0, target.psu_sd, size=stratum.n_psus) if target.psu_sd > 0 else np.zeros(stratum.n_psus)
            linear = shift + effect[psu_of_unit]
            if target.kind == "binary":
                logit = np.log(target.base / (1.0 - target.base)) + linear
                prob = 1.0 / (1.0 + np.exp(-logit))
                part[target.name] = (rng.random(len(part)) < prob).astype(int)
            else:
                noise = rng.normal(0.0, target.noise_sd, size=len(part)) if target.noise_sd > 0 else 0.0
                part[target.name] = target.base + linear + noise
        pieces.append(part)

    frame = pd.concat(pieces, ignore_index=True)
    frame.insert(0, "UNIT_ID", [f"U{k + 1:07d}" for k in range(len(frame))])
    logger.info(
        f"Synthetic frame: {len(frame)} units, {frame['PSU_ID'].nunique()} PSUs, {len(spec.strata)} strata",
        extra={"extra_data": {"seed": seed}},
    )
    return frame


def default_frame_spec() -> FrameSpec:
    """Six strata in three regions, 60 PSUs, 50,000 units, two binary and one quantitative target"""
    units = [12000, 10000, 9000, 8000, 6000, 5000]
    return FrameSpec(
        strata=[
            StratumSpec(stratum_id=f"{k + 1}", region=f"R{k // 2 + 1}", n_psus=10, units=u)
            for k, u in enumerate(units)
        ],
        targets=[
            TargetModel(name="Y1", kind="binary", base=0.35, stratum_sd=0.3, psu_sd=0.25),
            TargetModel(name="Y2", kind="binary", base=0.6, stratum_sd=0.2, psu_sd=0.2),
            TargetModel(name="Y3", kind="quantitative", base=100.0, stratum_sd=10.0, psu_sd=8.0, noise_sd=30.0),
        ],
        psu_size_sigma=0.6,
    )

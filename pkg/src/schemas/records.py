"""
Record types shared by the allocation, selection and evaluation services

Input rows are pydantic models so every value is validated when a table is loaded;
results produced by the services are plain dataclasses holding numpy arrays and
pandas tables.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

INTEGRALITY_TOLERANCE = 1e-9
BINARY_VARIANCE_TOLERANCE = 1e-9


def as_count(value: float, name: str) -> int:
    """Convert a float to an integer count, requiring integrality within 1e-9"""
    rounded = round(float(value))
    if abs(float(value) - rounded) > INTEGRALITY_TOLERANCE:
        raise ValueError(f"{name} must be an integer count, got {value}")
    return int(rounded)


class StratumInfo(BaseModel):
    """One design stratum: population size, target moments, cost and domain labels"""

    model_config = ConfigDict(frozen=True)

    stratum_id: str
    N: int = Field(gt=0, description="Population size")
    means: List[float]
    stdevs: List[float]
    cost: float = Field(default=1.0, gt=0)
    cens: bool = False
    domains: Dict[str, str] = Field(default_factory=dict, description="Domain type -> category label")

    @field_validator("N", mode="before")
    @classmethod
    def validate_count(cls, v):
        return as_count(v, "N")

    @field_validator("stdevs")
    @classmethod
    def validate_stdevs(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("standard deviations must be >= 0")
        return v

    @model_validator(mode="after")
    def validate_arity(self):
        if len(self.means) != len(self.stdevs):
            raise ValueError("mean/stdev arity mismatch")
        if not self.means:
            raise ValueError("at least one target variable is required")
        for dom_type, label in self.domains.items():
            if label is None or str(label).strip() == "":
                raise ValueError(f"empty {dom_type} label")
        return self

    @property
    def n_variables(self) -> int:
        return len(self.means)


class PrecisionConstraint(BaseModel):
    """Maximum coefficients of variation for one domain type or domain category"""

    model_config = ConfigDict(frozen=True)

    domain: str
    cv: List[float]

    @field_validator("cv")
    @classmethod
    def validate_cv(cls, v):
        if not v:
            raise ValueError("at least one CV bound is required")
        if any(not (0 < c < 1) for c in v):
            raise ValueError("CV bounds must lie in (0, 1)")
        return v


class PsuRecord(BaseModel):
    """Primary stage unit with its measure of size"""

    model_config = ConfigDict(frozen=True)

    psu_id: str
    stratum_id: str
    mos: int = Field(gt=0, description="Number of elementary units in the PSU")

    @field_validator("mos", mode="before")
    @classmethod
    def validate_count(cls, v):
        return as_count(v, "PSU_MOS")


class DesignParams(BaseModel):
    """Per-stratum SSU size (delta) and minimum SSUs per selected PSU"""

    model_config = ConfigDict(frozen=True)

    stratum_id: str
    delta: float = Field(default=1.0, ge=1.0)
    minimum: int = Field(ge=1)
    stratum_mos: Optional[int] = None

    @field_validator("minimum", mode="before")
    @classmethod
    def validate_minimum(cls, v):
        return as_count(v, "MINIMUM")

    @field_validator("stratum_mos", mode="before")
    @classmethod
    def validate_mos(cls, v):
        if v is None:
            return None
        return as_count(v, "STRAT_MOS")


class RhoRecord(BaseModel):
    """Intraclass correlations for self-representing and non-self-representing PSUs"""

    model_config = ConfigDict(frozen=True)

    stratum_id: str
    rho_sr: List[float]
    rho_nsr: List[float]

    @field_validator("rho_sr")
    @classmethod
    def validate_rho_sr(cls, v):
        if any(abs(r - 1.0) > 1e-12 for r in v):
            raise ValueError("RHO_AR values must equal 1")
        return v

    @field_validator("rho_nsr")
    @classmethod
    def validate_rho_nsr(cls, v):
        if any(not (-1.0 < r <= 1.0) for r in v):
            raise ValueError("RHO_NAR values must lie in (-1, 1]")
        return v

    @model_validator(mode="after")
    def validate_arity(self):
        if len(self.rho_sr) != len(self.rho_nsr):
            raise ValueError("RHO_AR/RHO_NAR arity mismatch")
        return self


class FactorRecord(BaseModel):
    """Positive per-variable factor for a stratum (deft or effst)"""

    model_config = ConfigDict(frozen=True)

    stratum_id: str
    values: List[float]

    @field_validator("values")
    @classmethod
    def validate_positive(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("factors must be > 0")
        return v


@dataclass
class InputBundle:
    """Everything ``load_inputs`` returns"""

    strata: List[StratumInfo]
    constraints: List[PrecisionConstraint]
    psus: List[PsuRecord] = field(default_factory=list)
    design: List[DesignParams] = field(default_factory=list)
    rho: List[RhoRecord] = field(default_factory=list)
    deft: Optional[List[FactorRecord]] = None
    effst: Optional[List[FactorRecord]] = None

    @property
    def n_variables(self) -> int:
        return self.strata[0].n_variables


@dataclass
class AllocationResult:
    """Outcome of a one- or two-stage allocation run"""

    strata_ids: List[str]
    n: np.ndarray
    n_continuous: np.ndarray
    iterations: pd.DataFrame
    expected_cv: pd.DataFrame
    planned_cv: pd.DataFrame
    sensitivity: pd.DataFrame
    alloc: pd.DataFrame
    take_all: np.ndarray
    psu_sr: Optional[np.ndarray] = None
    psu_nsr: Optional[np.ndarray] = None
    threshold: Optional[np.ndarray] = None
    deft_trace: Optional[pd.DataFrame] = None
    converged: bool = True
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def total_ssu(self) -> int:
        return int(np.sum(self.n))

    @property
    def is_two_stage(self) -> bool:
        return self.psu_sr is not None

    def alloc2_table(self) -> pd.DataFrame:
        """Per-stratum PSU and SSU counts (the ``alloc2.csv`` layout)"""
        if not self.is_two_stage:
            raise ValueError("alloc2 table is only defined for two-stage results")
        table = pd.DataFrame(
            {
                "STRATUM": self.strata_ids,
                "PSU_SR": self.psu_sr.astype(int),
                "PSU_NSR": self.psu_nsr.astype(int),
                "PSU_TOTAL": (self.psu_sr + self.psu_nsr).astype(int),
                "SSU": self.n.astype(int),
                "THRESHOLD": self.threshold,
            }
        )
        return table

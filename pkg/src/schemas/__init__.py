"""
Record types, CSV conventions and errors for SurveyAlloc
"""

from .errors import (
    ConvergenceError,
    DanglingReferenceError,
    EvaluationError,
    InfeasibleError,
    InputFileError,
    ParseError,
    SchemaError,
    SurveyAllocError,
    UsageError,
)
from .records import (
    AllocationResult,
    DesignParams,
    FactorRecord,
    InputBundle,
    PrecisionConstraint,
    PsuRecord,
    RhoRecord,
    StratumInfo,
)

__all__ = [
    "AllocationResult",
    "ConvergenceError",
    "DanglingReferenceError",
    "DesignParams",
    "EvaluationError",
    "FactorRecord",
    "InfeasibleError",
    "InputBundle",
    "InputFileError",
    "ParseError",
    "PrecisionConstraint",
    "PsuRecord",
    "RhoRecord",
    "SchemaError",
    "StratumInfo",
    "SurveyAllocError",
    "UsageError",
]

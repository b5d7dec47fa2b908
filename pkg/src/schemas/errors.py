"""
Exception hierarchy for SurveyAlloc

Each error carries a ``category`` that the command-line front end reports and maps to an
exit code.
"""

from typing import Optional


class SurveyAllocError(Exception):
    """Base class for all domain errors"""

    category = "error"
    exit_code = 1


class SchemaError(SurveyAllocError):
    """Input table does not follow the expected column layout or value rules"""

    category = "schema"


class ParseError(SchemaError):
    """A cell could not be converted to the expected type"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.row = row
        self.column = column


class InputFileError(SurveyAllocError):
    """A required input path is missing or unreadable"""

    category = "input"

    def __init__(self, path: str, reason: str = "file not found"):
        super().__init__(f"{reason}: {path}")
        self.path = path


class DanglingReferenceError(SurveyAllocError):
    """An identifier refers to a stratum, PSU or domain that does not exist"""

    category = "reference"


class InfeasibleError(SurveyAllocError):
    """Parameters admit no valid allocation or computation"""

    category = "infeasibility"


class ConvergenceError(SurveyAllocError):
    """An iterative or rejective procedure gave up"""

    category = "convergence"


class EvaluationError(SurveyAllocError):
    """Monte Carlo evaluation was requested with unusable settings"""

    category = "evaluation"


class UsageError(SurveyAllocError):
    """Command-line usage problem detected after option parsing"""

    category = "usage"
    exit_code = 2

"""
Utility modules for SurveyAlloc
"""

from .logger import LoggerMixin, get_logger, log_performance, log_stage, setup_logging
from .numeric import largest_remainder, stable_sum
from .random_streams import as_rng, derive_rng, derive_seed, make_rng

__all__ = [
    "LoggerMixin",
    "get_logger",
    "log_performance",
    "log_stage",
    "setup_logging",
    "largest_remainder",
    "stable_sum",
    "as_rng",
    "derive_rng",
    "derive_seed",
    "make_rng",
]

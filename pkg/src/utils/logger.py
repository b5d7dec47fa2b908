"""
Logging for SurveyAlloc

Console records go to stderr. With a log directory, records are also written to a
rotating file. Every record carries the subcommand and seed of the current run, so a
JSON log can be joined with run_manifest.json.
"""

import json
import logging
import logging.handlers
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

LOG_FILE = "surveyalloc.log"
MAX_LOG_BYTES = 5 * 1024 * 1024
LOG_BACKUPS = 3

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(command)s] %(message)s"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(command)s seed=%(seed)s] %(funcName)s:%(lineno)d - %(message)s"


class RunContextFilter(logging.Filter):
    """Stamps records with the subcommand and seed of the run"""

    def __init__(self, command: Optional[str] = None, seed: Optional[int] = None):
        super().__init__()
        self.command = command or "-"
        self.seed = seed

    def filter(self, record: logging.LogRecord) -> bool:
        record.command = self.command
        record.seed = self.seed
        return True


class JsonFormatter(logging.Formatter):
    """One JSON object per record"""

    def format(self, record: logging.LogRecord) -> str:
        entry: Dict[str, Any] = {
            "time": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "command": getattr(record, "command", "-"),
            "seed": getattr(record, "seed", None),
            "message": record.getMessage(),
        }
        if hasattr(record, "extra_data"):
            entry["data"] = record.extra_data
        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


def _handlers(log_dir: Optional[str], json_format: bool) -> List[logging.Handler]:
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(JsonFormatter() if json_format else logging.Formatter(TEXT_FORMAT, "%H:%M:%S"))
    handlers: List[logging.Handler] = [console]

    if log_dir:
        directory = Path(log_dir)
        directory.mkdir(parents=True, exist_ok=True)
        rotating = logging.handlers.RotatingFileHandler(
            directory / LOG_FILE, maxBytes=MAX_LOG_BYTES, backupCount=LOG_BACKUPS, encoding="utf-8"
        )
        rotating.setFormatter(JsonFormatter() if json_format else logging.Formatter(FILE_FORMAT))
        handlers.append(rotating)
    return handlers


def setup_logging(
    log_dir: Optional[str] = None,
    log_level: Optional[str] = None,
    json_format: Optional[bool] = None,
    command: Optional[str] = None,
    seed: Optional[int] = None,
) -> logging.Logger:
    """
    Configure the root logger for one run

    Arguments left as None fall back to the SURVEYALLOC_LOG_* settings. Calling it again
    replaces the previous handlers, which the test suite relies on.

    Args:
        log_dir: Directory for the rotating log file (None: console only)
        log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL
        json_format: Emit JSON records instead of text
        command: Subcommand stamped on every record
        seed: Run seed stamped on every record

    Returns:
        The configured root logger
    """
    from config.settings import get_settings

    defaults = get_settings().get_logging_config()
    if log_dir is None:
        log_dir = defaults["log_dir"]
    if log_level is None:
        log_level = defaults["log_level"]
    if json_format is None:
        json_format = defaults["json_format"]

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    level = getattr(logging, str(log_level).upper(), logging.INFO)
    root.setLevel(level)
    context = RunContextFilter(command, seed)
    for handler in _handlers(log_dir, json_format):
        handler.setLevel(level)
        handler.addFilter(context)
        root.addHandler(handler)

    root.debug(
        "Logging configured",
        extra={"extra_data": {"level": logging.getLevelName(level), "json": json_format, "log_dir": log_dir}},
    )
    return root


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


class LoggerMixin:
    """Per-class logger with structured helpers"""

    @property
    def logger(self) -> logging.Logger:
        return logging.getLogger(f"{self.__class__.__module__}.{self.__class__.__name__}")

    def log_info(self, message: str, **kwargs):
        self.logger.info(message, extra={"extra_data": kwargs})

    def log_warning(self, message: str, **kwargs):
        self.logger.warning(message, extra={"extra_data": kwargs})


def log_stage(logger: logging.Logger, stage: str, **kwargs):
    """Record the start of a pipeline stage"""
    logger.info(f"Stage: {stage}", extra={"extra_data": {"stage": stage, **kwargs}})


def log_stage_error(logger: logging.Logger, stage: str, error: Exception, **kwargs):
    """Record a failed stage; the traceback is kept at DEBUG level only"""
    logger.error(
        f"Stage failed: {stage} - {error}",
        exc_info=logger.isEnabledFor(logging.DEBUG),
        extra={"extra_data": {"stage": stage, "error_type": type(error).__name__, **kwargs}},
    )


def log_performance(logger: logging.Logger, operation: str, duration: float, **kwargs):
    """Record the wall time of a solver or simulation step"""
    logger.info(
        f"{operation} took {duration:.3f}s",
        extra={"extra_data": {"operation": operation, "duration_ms": round(duration * 1000, 3), **kwargs}},
    )

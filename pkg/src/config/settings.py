"""
Configuration settings for SurveyAlloc
Environment-driven defaults for the allocation, selection and evaluation pipeline
"""

from enum import Enum
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class LogLevel(str, Enum):
    """Log levels"""

    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class LogFormat(str, Enum):
    """Log output formats"""

    TEXT = "text"
    JSON = "json"


class Settings(BaseSettings):
    """Application settings with environment-based configuration"""

    model_config = SettingsConfigDict(
        env_prefix="SURVEYALLOC_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Logging
    log_level: LogLevel = Field(default=LogLevel.INFO)
    log_format: LogFormat = Field(default=LogFormat.TEXT)
    log_dir: Optional[str] = Field(default=None, description="Directory for rotating log files")

    # Application Configuration
    app_name: str = Field(default="SurveyAlloc")
    app_version: str = Field(default="1.0.0")

    # ============================================================================
    # Output
    # ============================================================================
    output_dir: str = Field(default="./output", description="Default directory for result files")
    float_format: Optional[str] = Field(default=None, description="printf-style float format for CSV output")

    # ============================================================================
    # Allocation
    # ============================================================================
    bethel_epsilon: float = Field(default=1e-11, description="Multiplier fixed-point tolerance")
    bethel_max_iters: int = Field(default=200, description="Multiplier fixed-point iteration cap")
    minnumstrat: int = Field(default=2, description="Minimum SSUs per stratum")
    min_psu_strat: int = Field(default=2, description="Minimum NSR PSUs per stratum")

    # Two-stage stop rule
    max_ssu_diff: float = Field(default=5.0, description="Stop when SSU totals differ by less than this")
    max_deft_diff: float = Field(default=0.06, description="Stop when the largest deft change is below this")
    max_twostage_iters: int = Field(default=20, description="Two-stage iteration cap")

    # ============================================================================
    # Selection and evaluation
    # ============================================================================
    sampford_max_attempts: int = Field(default=10_000_000, description="Rejection cap for Sampford draws")
    nsampl: int = Field(default=500, description="Monte Carlo replicates for design evaluation")
    jobs: int = Field(default=1, description="Worker threads for independent replicates and grid points")

    # ============================================================================
    # Validators
    # ============================================================================

    @field_validator("bethel_epsilon", "max_ssu_diff", "max_deft_diff")
    @classmethod
    def validate_positive_float(cls, v):
        """Tolerances must be positive"""
        if v <= 0:
            raise ValueError("Tolerance must be greater than 0")
        return v

    @field_validator(
        "bethel_max_iters", "minnumstrat", "min_psu_strat", "max_twostage_iters", "sampford_max_attempts", "jobs"
    )
    @classmethod
    def validate_positive_int(cls, v):
        """Counts must be at least 1"""
        if v < 1:
            raise ValueError("Value must be at least 1")
        return v

    @field_validator("nsampl")
    @classmethod
    def validate_nsampl(cls, v):
        """A coefficient of variation needs two replicates"""
        if v < 2:
            raise ValueError("nsampl must be >= 2")
        return v

    # ============================================================================
    # Utility Methods
    # ============================================================================

    def get_logging_config(self) -> dict:
        """Keyword arguments for utils.logger.setup_logging"""
        return {
            "log_dir": self.log_dir,
            "log_level": self.log_level.value,
            "json_format": self.log_format == LogFormat.JSON,
        }


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get settings instance"""
    return settings


def reload_settings() -> Settings:
    """Re-read environment variables (used after a test changes them)"""
    global settings
    settings = Settings()
    return settings

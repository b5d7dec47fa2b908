"""
Run configuration for the command line

A run is described by a RunConfig. Values come from an optional config file (TOML or
YAML, flat keys or a section named after the subcommand) and from command-line flags;
flags win. Required values are checked per subcommand before any input is read.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    tomllib = None

from schemas.errors import InputFileError, UsageError

REQUIRED: Dict[str, List[str]] = {
    "prepare": ["frame", "id_psu", "id_ssu", "strata_var", "target_vars"],
    "synth": ["seed"],
    "check": ["strata", "psu", "des"],
    "allocate": ["strata", "errors"],
    "select-psu": ["alloc2", "psu", "des", "seed"],
    "select-ssu": ["frame", "sample_psu", "seed"],
    "evaluate": ["frame", "strata", "errors", "alloc2", "psu", "des", "target_vars", "seed"],
    "sensitivity": ["strata", "errors", "psu", "des", "rho", "min", "max"],
}
TWO_STAGE_REQUIRED = ["psu", "des", "rho"]


class RunConfig(BaseModel):
    """All parameters of one CLI invocation"""

    model_config = ConfigDict(extra="forbid")

    command: str
    output_dir: Optional[str] = None
    seed: Optional[int] = None
    jobs: Optional[int] = Field(default=None, ge=1)
    verbose: bool = False
    quiet: bool = False
    log_json: bool = False
    log_dir: Optional[str] = None

    # input files
    frame: Optional[str] = None
    strata: Optional[str] = None
    errors: Optional[str] = None
    psu: Optional[str] = None
    des: Optional[str] = None
    rho: Optional[str] = None
    deft: Optional[str] = None
    effst: Optional[str] = None
    alloc2: Optional[str] = None
    sample_psu: Optional[str] = None
    spec: Optional[str] = None

    # frame columns
    id_psu: str = "PSU_ID"
    id_ssu: Optional[str] = None
    strata_var: str = "STRATUM"
    target_vars: List[str] = Field(default_factory=list)
    deff_var: Optional[str] = None
    domain_vars: List[str] = Field(default_factory=list)
    binary_vars: List[str] = Field(default_factory=list)

    # preparation
    delta: float = Field(default=1.0, ge=1.0)
    minimum: int = Field(default=50, ge=1)
    deff_sugg: Optional[float] = Field(default=None, gt=0)
    deff_sugg_start: bool = False

    # allocation
    stages: int = 1
    minnumstrat: Optional[int] = Field(default=None, ge=1)
    min_psu_strat: Optional[int] = Field(default=None, ge=1)
    max_ssu_diff: Optional[float] = Field(default=None, gt=0)
    max_deft_diff: Optional[float] = Field(default=None, gt=0)
    max_iters: Optional[int] = Field(default=None, ge=1)

    # selection and evaluation
    psu_per_substratum: Optional[int] = Field(default=None, ge=1)
    nsampl: Optional[int] = None
    redraw_psu: bool = True

    # sensitivity
    min: Optional[int] = Field(default=None, ge=1)
    max: Optional[int] = Field(default=None, ge=1)
    n_points: int = Field(default=10, ge=1)

    @field_validator("stages")
    @classmethod
    def validate_stages(cls, v):
        if v not in (1, 2):
            raise ValueError("stages must be 1 or 2")
        return v

    @field_validator("target_vars", "domain_vars", "binary_vars", mode="before")
    @classmethod
    def split_names(cls, v):
        if v is None:
            return []
        if isinstance(v, str):
            v = [v]
        names: List[str] = []
        for item in v:
            names.extend(part.strip() for part in str(item).split(",") if part.strip())
        return names

    def require(self) -> None:
        """Raise UsageError naming the first missing required value"""
        needed = list(REQUIRED.get(self.command, []))
        if self.command == "allocate" and self.stages == 2:
            needed += TWO_STAGE_REQUIRED
        for name in needed:
            value = getattr(self, name)
            if value is None or value == []:
                raise UsageError(f"{self.command}: missing required option --{name.replace('_', '-')}")
        if self.command == "sensitivity" and self.min > self.max:
            raise UsageError("sensitivity: --min must not exceed --max")

    def manifest(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def read_config_file(path: str) -> Dict[str, Any]:
    """Parse a TOML (.toml) or YAML (.yaml/.yml) config file into a dict"""
    config_path = Path(path)
    if not config_path.is_file():
        raise InputFileError(str(config_path))
    text = config_path.read_text(encoding="utf-8")
    try:
        if config_path.suffix == ".toml":
            if tomllib is None:
                raise UsageError("TOML config files need Python 3.11 or newer; use YAML instead")
            data = tomllib.loads(text)
        else:
            data = yaml.safe_load(text) or {}
    except (ValueError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot parse config file {config_path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {config_path} must contain a mapping")
    return data


def _normalise(values: Dict[str, Any]) -> Dict[str, Any]:
    return {str(k).replace("-", "_"): v for k, v in values.items()}


def build_run_config(command: str, flags: Dict[str, Any], config_path: Optional[str] = None) -> RunConfig:
    """
    Merge config-file values with command-line flags

    Args:
        command: Subcommand name
        flags: Parsed flags; None means "not given"
        config_path: Optional TOML/YAML file

    Returns:
        Validated RunConfig
    """
    merged: Dict[str, Any] = {}
    if config_path:
        data = _normalise(read_config_file(config_path))
        section = data.pop(command.replace("-", "_"), None)
        merged.update({k: v for k, v in data.items() if not isinstance(v, dict)})
        if isinstance(section, dict):
            merged.update(_normalise(section))
    merged.update({k: v for k, v in flags.items() if v is not None})
    merged["command"] = command
    try:
        return RunConfig(**merged)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(part) for part in first.get("loc", ()))
        raise UsageError(f"invalid option {loc}: {first.get('msg')}") from None

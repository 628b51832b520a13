"""Run configuration: YAML files validated against versioned pydantic schemas.

Every file carries ``schema_version: 1`` and a ``command`` key selecting one
of the schemas below. Unknown keys are rejected. Relative input paths are
resolved against the working directory; output file names are placed under
the ``--out`` directory.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import SpecError
from .estimation import EstimationConfig
from .model import BLOCK_NAMES, FAMILIES, GasCoefficients, ModelSpec
from .simulation import DGP_FROZEN, PATTERNS
from .studies import STUDIES, StudySettings

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpecSection(_Strict):
    family: str
    d: int = Field(1, ge=1)
    J: int = Field(2, ge=1)
    frozen_blocks: list[str] = []
    shape_offset: Optional[float] = None

    @field_validator("family")
    @classmethod
    def _family(cls, v):
        if v not in FAMILIES:
            raise ValueError(f"unknown family {v!r}; expected one of {list(FAMILIES)}")
        return v

    @field_validator("frozen_blocks")
    @classmethod
    def _blocks(cls, v):
        bad = [b for b in v if b not in BLOCK_NAMES]
        if bad:
            raise ValueError(f"unknown blocks {bad}; expected names from {list(BLOCK_NAMES)}")
        return v

    def build(self) -> ModelSpec:
        return ModelSpec(self.family, self.d, self.J, frozenset(self.frozen_blocks), self.shape_offset)


class CoefficientsSection(_Strict):
    kappa: list[float]
    a_diag: list[float]
    b_diag: list[float]

    def build(self) -> GasCoefficients:
        return GasCoefficients(self.kappa, self.a_diag, self.b_diag)


class EstimationSection(_Strict):
    max_iterations: int = 500
    gradient_tolerance: float = 1e-5
    restarts: int = 3
    stationarity_bound: float = 0.999
    fd_step: float = 1e-6
    standard_errors: bool = False
    parametrization: Literal["level", "intercept"] = "level"
    nonnegative_a: bool = True

    def build(self, seed: int) -> EstimationConfig:
        return EstimationConfig(seed=seed, **self.model_dump())


class SimulateConfig(_Strict):
    schema_version: Literal[1]
    command: Literal["simulate"]
    generator: Literal["damm", "sdmm", "corr-pattern", "weight-pattern", "dgp"]
    T: int = Field(ge=1)
    seed: int = 0
    pattern: Optional[str] = None
    dgp: Optional[str] = None
    spec: Optional[SpecSection] = None
    coefficients: Optional[CoefficientsSection] = None
    data_file: str = "data.csv"
    truth_file: str = "truth.csv"

    def check(self):
        if self.generator in ("corr-pattern", "weight-pattern"):
            _need(self.pattern, "pattern")
            if self.pattern not in PATTERNS:
                raise SpecError(f"config error: unknown pattern {self.pattern!r}; expected one of {list(PATTERNS)}")
        if self.generator == "dgp":
            _need(self.dgp, "dgp")
            if self.dgp not in DGP_FROZEN:
                raise SpecError(f"config error: unknown dgp {self.dgp!r}; expected one of {sorted(DGP_FROZEN)}")
        if self.generator == "damm":
            _need(self.spec, "spec")
            _need(self.coefficients, "coefficients")


class FitConfig(_Strict):
    schema_version: Literal[1]
    command: Literal["fit"]
    data: str
    spec: SpecSection
    seed: int = 0
    fixed_blocks: list[str] = []
    fixed_state: Optional[list[float]] = None
    estimation: EstimationSection = EstimationSection()
    write_trace: bool = False
    result_file: str = "fit.json"
    trace_file: str = "trace.csv"


class FilterConfig(_Strict):
    schema_version: Literal[1]
    command: Literal["filter"]
    data: str
    spec: SpecSection
    coefficients: CoefficientsSection
    seed: int = 0
    trace_file: str = "trace.csv"


class ForecastConfig(_Strict):
    schema_version: Literal[1]
    command: Literal["forecast"]
    data: str
    spec: SpecSection
    coefficients: CoefficientsSection
    seed: int = 0
    forecast_file: str = "forecast.json"


class BenchConfig(_Strict):
    schema_version: Literal[1]
    command: Literal["bench"]
    study: str
    B: int = Field(20, ge=1)
    T: int = Field(1000, ge=2)
    seed: int = 0
    scenarios: list[str] = []
    models: list[str] = []
    restarts: int = Field(1, ge=1)
    max_iterations: int = Field(500, ge=1)
    akl: bool = True
    window: int = Field(100, ge=2)
    logscore_window: int = Field(500, ge=2)
    refit_every: int = Field(250, ge=1)
    table_file: str = "table.csv"

    @field_validator("study")
    @classmethod
    def _study(cls, v):
        if v not in STUDIES:
            raise ValueError(f"unknown study {v!r}; expected one of {list(STUDIES)}")
        return v

    def settings(self) -> StudySettings:
        return StudySettings(
            study=self.study,
            B=self.B,
            T=self.T,
            seed=self.seed,
            scenarios=tuple(self.scenarios),
            models=tuple(self.models),
            restarts=self.restarts,
            max_iterations=self.max_iterations,
            akl=self.akl,
            window=self.window,
            logscore_window=self.logscore_window,
            refit_every=self.refit_every,
        )


COMMANDS = {"simulate": SimulateConfig, "fit": FitConfig, "filter": FilterConfig, "forecast": ForecastConfig, "bench": BenchConfig}


def _need(value, key):
    if value is None:
        raise SpecError(f"config error: missing key '{key}'")


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        if err["type"] == "missing":
            parts.append(f"missing key '{loc}'")
        elif err["type"] == "extra_forbidden":
            parts.append(f"unknown key '{loc}'")
        else:
            parts.append(f"{loc}: {err['msg']}")
    return "config error: " + "; ".join(parts)


def parse_config(raw: dict, command: str | None = None):
    """Validate a mapping; ``command`` (from the CLI) must match the file if both are given."""
    if not isinstance(raw, dict):
        raise SpecError("config error: the file must hold a mapping")
    raw = dict(raw)
    if command is not None:
        raw.setdefault("command", command)
        if raw["command"] != command:
            raise SpecError(f"config error: file is for command {raw['command']!r}, not {command!r}")
    if "schema_version" not in raw:
        raise SpecError("config error: missing key 'schema_version'")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise SpecError(f"config error: unsupported schema_version {raw['schema_version']!r}; expected {SCHEMA_VERSION}")
    if "command" not in raw:
        raise SpecError("config error: missing key 'command'")
    if raw["command"] not in COMMANDS:
        raise SpecError(f"config error: unknown command {raw['command']!r}; expected one of {list(COMMANDS)}")
    try:
        cfg = COMMANDS[raw["command"]].model_validate(raw)
    except ValidationError as exc:
        raise SpecError(_format_errors(exc)) from None
    if isinstance(cfg, SimulateConfig):
        cfg.check()
    return cfg


def load_config(path, command: str | None = None):
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecError(f"config error: not valid YAML ({exc})") from None
    return parse_config(raw, command)

"""Run configuration: a strict YAML schema with CLI overrides.

Precedence is built-in defaults < YAML file < command-line flags. The only
environment variable consulted is PATHLOSS_BENCH_OUT, the default output
directory when neither the file nor the flags name one.
"""

import os
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from pathloss_ncv.exceptions import ConfigError
from pathloss_ncv.regressors.families import (
    TABLE_ORDER,
    EstimatorSpec,
    family_name,
    order_specs,
    registered_families,
)
from pathloss_ncv.types import SyntheticConfig

OUTPUT_ENV_VAR = "PATHLOSS_BENCH_OUT"
DEFAULT_OUTPUT_DIR = "pathloss_bench_out"
SYNTHETIC_SOURCE = "synthetic"

ReportFormat = Literal["yaml", "table", "charts"]


class RunConfig(BaseModel):
    """Everything one benchmark run needs.

    `data` is a CSV path or the literal `synthetic`, in which case the
    `synthetic` block describes the generator.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    data: str
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    column_mapping: dict[str, str] = Field(default_factory=dict)
    delimiter: str = ","
    load_policy: Literal["reject", "drop"] = "reject"
    models: list[str] = Field(default_factory=lambda: list(TABLE_ORDER))
    grids: dict[str, dict[str, list[Any]]] = Field(default_factory=dict)
    outer_k: int = Field(default=6, ge=2)
    inner_k: int = Field(default=4, ge=2)
    seed: int = Field(default=0, ge=0)
    threads: int = Field(default=1, ge=1)
    output_dir: Optional[str] = None
    report_formats: list[ReportFormat] = Field(
        default_factory=lambda: ["yaml", "table", "charts"]
    )
    chart_format: Literal["svg", "html"] = "svg"
    selection_metric: Literal["mse", "mae"] = "mse"
    leaky_baseline: bool = False

    @field_validator("models", mode="before")
    def resolve_model_aliases(cls, v):
        if isinstance(v, list):
            return [family_name(m) if isinstance(m, str) else m for m in v]
        return v

    @field_validator("grids", mode="before")
    def resolve_grid_aliases(cls, v):
        if isinstance(v, dict):
            return {family_name(k) if isinstance(k, str) else k: g for k, g in v.items()}
        return v

    @model_validator(mode="after")
    def check_models(self) -> "RunConfig":
        known = registered_families()
        if not self.data.strip():
            raise ValueError("data must name a CSV file or `synthetic`.")
        if not self.models:
            raise ValueError("models must list at least one model family.")
        unknown = [m for m in self.models if m not in known]
        if unknown:
            raise ValueError(f"models lists unknown families {unknown}; known: {known}.")
        if len(set(self.models)) != len(self.models):
            raise ValueError(f"models lists a family twice: {self.models}.")
        stray = [g for g in self.grids if g not in self.models]
        if stray:
            raise ValueError(f"grids names families {stray} that are not in models.")
        return self

    @property
    def is_synthetic(self) -> bool:
        return self.data == SYNTHETIC_SOURCE

    def estimator_specs(self) -> list[EstimatorSpec]:
        """One spec per listed model, built-in families in table order."""
        return order_specs(
            [EstimatorSpec(family=name, grid=self.grids.get(name, {})) for name in self.models]
        )

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ENV_VAR, DEFAULT_OUTPUT_DIR))


def _messages(error: ValidationError) -> list[str]:
    messages = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"]) or "config"
        messages.append(f"{key}: {item['msg']}")
    return messages


def read_config_file(path: Union[str, Path]) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config: file {path} does not exist."])
    try:
        with open(path, "r") as f:
            content = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError([f"config: {path} is not valid YAML ({e})."]) from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigError([f"config: {path} must hold a mapping at top level."])
    return content


def validate_config(
    source: Union[str, Path, dict[str, Any], None] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> RunConfig:
    """Resolves a RunConfig from a YAML file (or mapping) and CLI overrides.

    Overrides whose value is None are ignored. Every problem is reported in
    the raised ConfigError, each message prefixed by the offending key.
    """
    if source is None:
        content: dict[str, Any] = {}
    elif isinstance(source, dict):
        content = dict(source)
    else:
        content = read_config_file(source)
    for key, value in (overrides or {}).items():
        if value is not None:
            content[key] = value
    if "data" not in content:
        raise ConfigError(["data: a data source (CSV path or `synthetic`) is required."])
    try:
        config = RunConfig(**content)
    except ValidationError as e:
        raise ConfigError(_messages(e)) from e
    errors = []
    for name in config.models:
        try:
            EstimatorSpec(family=name, grid=config.grids.get(name, {}))
        except ValidationError as e:
            errors.extend(f"grids.{name}: {m}" for m in _messages(e))
    if errors:
        raise ConfigError(errors)
    return config


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)

"""Environment settings and JSON run configurations."""
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .continuation import ContinuationSettings, SwitchingSettings
from .mesh_fem import DomainKind, DomainSpec, Mesh, build_mesh
from .models import ModelTag, Params
from .utils.error_handlers import ConfigValidationException

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-level settings read from XDCONT_* variables and an optional .env file."""

    model_config = SettingsConfigDict(env_prefix="XDCONT_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    log_format: str = Field("console", pattern="^(console|json)$")
    output_dir: str = "output"
    threads: int = Field(1, ge=1)
    seed: int = 0


settings = Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainConfig(_Section):
    kind: DomainKind = DomainKind.INTERVAL
    Lx: float = Field(1.0, gt=0)
    Ly: Optional[float] = Field(None, gt=0)
    offset: Optional[Tuple[float, ...]] = None

    @model_validator(mode="after")
    def _rectangle_needs_ly(self) -> "DomainConfig":
        if self.kind is DomainKind.RECTANGLE and self.Ly is None:
            raise ValueError("rectangle domains need Ly")
        return self

    def to_spec(self) -> DomainSpec:
        return DomainSpec(self.kind, self.Lx, self.Ly, self.offset)


class MeshConfig(_Section):
    nx: int = Field(26, ge=2)
    ny: Optional[int] = Field(None, ge=2)


class StudyKind(str, Enum):
    SINGLE_BRANCH = "single-branch"
    FULL_DIAGRAM = "full-diagram"
    TURING = "turing"
    SWEEP_EPS = "sweep-eps"


class TuringConfig(_Section):
    lambda_max: float = Field(300.0, gt=0)
    param_range: Optional[Tuple[float, float]] = None
    scan_points: int = Field(400, ge=2)
    curve_lambda_max: Optional[float] = Field(None, gt=0)
    curve_points: int = Field(400, ge=2)


class SweepConfig(_Section):
    eps: List[float] = Field(default_factory=lambda: [0.05, 0.01, 0.005, 0.001])
    n_events: Optional[int] = Field(3, ge=1)
    topology: bool = False
    include_cross: bool = True

    @model_validator(mode="after")
    def _positive_eps(self) -> "SweepConfig":
        if not self.eps or any(e <= 0 for e in self.eps):
            raise ValueError("eps values must be positive and non-empty")
        return self


class OutputConfig(_Section):
    snapshots: bool = True
    spectra: bool = False
    plots: bool = True


class RunConfig(_Section):
    """One study: model, geometry, coefficients, continuation knobs and outputs."""

    model: ModelTag = ModelTag.CROSS
    domain: DomainConfig = Field(default_factory=DomainConfig)
    mesh: MeshConfig = Field(default_factory=MeshConfig)
    params: Params = Field(default_factory=Params)
    start_value: Optional[float] = None
    continuation: ContinuationSettings = Field(default_factory=ContinuationSettings)
    switching: SwitchingSettings = Field(default_factory=SwitchingSettings)
    study: StudyKind = StudyKind.FULL_DIAGRAM
    turing: TuringConfig = Field(default_factory=TuringConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _fill_defaults(self) -> "RunConfig":
        if self.domain.kind is DomainKind.RECTANGLE and self.mesh.ny is None:
            ny = round((self.mesh.nx - 1) * self.domain.Ly / self.domain.Lx) + 1  # type: ignore
            self.mesh = MeshConfig(nx=self.mesh.nx, ny=ny)
        if self.start_value is None:
            self.start_value = self.params.value(self.params.active)
        lo, hi = self.continuation.param_range
        if not lo <= self.start_value <= hi:
            raise ValueError(
                f"start_value {self.start_value} lies outside param_range {(lo, hi)}"
            )
        return self

    @property
    def param_name(self) -> str:
        return self.params.active

    def domain_spec(self) -> DomainSpec:
        return self.domain.to_spec()

    def build_mesh(self) -> Mesh:
        return build_mesh(self.domain_spec(), self.mesh.nx, self.mesh.ny)


def _defaulted_fields(model: BaseModel, raw: Any, prefix: str = "") -> List[str]:
    """Dotted paths of fields that were absent from the raw input."""
    paths = []
    raw = raw if isinstance(raw, dict) else {}
    for name in type(model).model_fields:
        path = f"{prefix}{name}"
        if name not in raw:
            paths.append(path)
            continue
        value = getattr(model, name)
        if isinstance(value, BaseModel):
            paths.extend(_defaulted_fields(value, raw[name], prefix=f"{path}."))
    return paths


def parse_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        errors = [
            {"field": ".".join(str(part) for part in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        fields = ", ".join(e["field"] or "<root>" for e in errors)
        raise ConfigValidationException(
            f"invalid configuration ({fields})", details={"errors": errors}
        ) from exc


def load_config(path: Union[str, Path]) -> RunConfig:
    """Parse, default and validate a JSON run configuration; unknown keys are rejected."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigValidationException(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigValidationException(
            f"config is not valid JSON: {exc.msg}",
            details={"line": exc.lineno, "column": exc.colno},
        ) from exc
    if not isinstance(data, dict):
        raise ConfigValidationException("config root must be a JSON object")
    config = parse_config(data)
    defaulted = _defaulted_fields(config, data)
    if defaulted:
        logger.info(f"config {path.name}: defaulted {', '.join(defaulted)}")
    mesh_raw = data.get("mesh", {})
    if config.domain.kind is DomainKind.RECTANGLE and "ny" not in mesh_raw:
        logger.info(f"config {path.name}: mesh.ny defaulted to {config.mesh.ny}")
    return config

from __future__ import annotations

import json
import os
import tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, InvalidParameterError
from .models import HARDY_EDGE, MIN_NODES, EvolveConfig, RadialGrid


__all__ = [
    "ClassifySettings",
    "EvolveSettings",
    "GridSettings",
    "GroundStateSettings",
    "LabConfig",
    "SweepConfig",
    "config_file_path",
    "load_config",
    "load_config_from_path",
    "load_sweep_config",
    "resolve_profile",
    "write_config_file",
]

_SECTIONS = ("grid", "ground_state", "evolve", "classify")

_ENVIRONMENT = {
    "grid.r_max": "NLSLAB_RMAX",
    "grid.n": "NLSLAB_N",
    "ground_state.tol": "NLSLAB_TOL",
    "evolve.dt": "NLSLAB_DT",
    "evolve.t_final": "NLSLAB_TFINAL",
}

Value = Union[str, bool, int, float, list, None]


@dataclass
class GridSettings:
    r_max: float = 30.0
    n: int = 6000

    def build(self) -> RadialGrid:
        return RadialGrid(r_max=self.r_max, n=self.n)


@dataclass
class GroundStateSettings:
    tol: float = 1e-6


@dataclass
class EvolveSettings:
    dt: float = 1e-3
    t_final: float = 10.0
    monitor_stride: int = 10
    blowup_factor: float = 100.0
    scatter_window: tuple[float, float] | None = None
    scatter_tol: float = 1e-2
    max_refinements: int = 4

    def build(self) -> EvolveConfig:
        return EvolveConfig(
            dt=self.dt,
            t_final=self.t_final,
            monitor_stride=self.monitor_stride,
            blowup_factor=self.blowup_factor,
            scatter_window=self.scatter_window,
            scatter_tol=self.scatter_tol,
            max_refinements=self.max_refinements,
        )


@dataclass
class ClassifySettings:
    threshold_tol: float = 1e-3


@dataclass
class LabConfig:
    profile: str = "default"
    grid: GridSettings = field(default_factory=GridSettings)
    ground_state: GroundStateSettings = field(default_factory=GroundStateSettings)
    evolve: EvolveSettings = field(default_factory=EvolveSettings)
    classify: ClassifySettings = field(default_factory=ClassifySettings)

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        window = payload["evolve"]["scatter_window"]
        payload["evolve"]["scatter_window"] = list(window) if window else None
        return payload


def resolve_profile(profile: str | None = None) -> str:
    if profile is not None:
        return profile
    return os.environ.get("NLSLAB_PROFILE", "default")


def config_file_path(profile: str | None = None, config_home: Path | None = None) -> Path:
    base_home = config_home or Path.home() / ".config" / "nlslab"
    return base_home / f"config.{resolve_profile(profile)}.toml"


def write_config_file(path: Path, config: LabConfig, *, force: bool = False) -> Path:
    if path.exists() and not force:
        raise FileExistsError(f"{path} already exists")
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = config.to_dict()
    lines: list[str] = []
    for section in _SECTIONS:
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        for key, value in payload[section].items():
            if value is None:
                continue
            lines.append(f"{key} = {json.dumps(value)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_toml_file(path: Path) -> dict[str, Value]:
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", key_path=str(path)) from exc
    result: dict[str, Value] = {}
    for section, entries in data.items():
        if section not in _SECTIONS or not isinstance(entries, dict):
            raise ConfigError("unknown section", key_path=section)
        for key, value in entries.items():
            if value is None:
                continue
            result[f"{section}.{key.lower()}"] = value
    return result


def _parse_float_like(value: Value, key: str) -> float:
    try:
        return float(str(value).strip()) if isinstance(value, str) else float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected a number, got {value!r}", key_path=key) from exc


def _parse_int_like(value: Value, key: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"expected an integer, got {value!r}", key_path=key)
    try:
        return int(str(value).strip())
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {value!r}", key_path=key) from exc


def _parse_window(value: Value, key: str) -> tuple[float, float] | None:
    if value is None or value == "":
        return None
    if isinstance(value, str):
        value = [part for part in value.split(",") if part.strip()]
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"expected two times t1, t2, got {value!r}", key_path=key)
    return _parse_float_like(value[0], key), _parse_float_like(value[1], key)


_PARSERS = {
    "grid.r_max": _parse_float_like,
    "grid.n": _parse_int_like,
    "ground_state.tol": _parse_float_like,
    "evolve.dt": _parse_float_like,
    "evolve.t_final": _parse_float_like,
    "evolve.monitor_stride": _parse_int_like,
    "evolve.blowup_factor": _parse_float_like,
    "evolve.scatter_window": _parse_window,
    "evolve.scatter_tol": _parse_float_like,
    "evolve.max_refinements": _parse_int_like,
    "classify.threshold_tol": _parse_float_like,
}


def _environment_values() -> dict[str, Value]:
    values: dict[str, Value] = {}
    for key, variable in _ENVIRONMENT.items():
        raw = os.environ.get(variable)
        if raw:
            values[key] = raw
    return values


def load_config(profile: str | None = None, config_home: Path | None = None) -> LabConfig:
    resolved = resolve_profile(profile)
    override = os.environ.get("NLSLAB_CONFIG_FILE")
    path = Path(override).expanduser() if override else config_file_path(resolved, config_home)
    if path.exists():
        return load_config_from_path(path, resolved)
    return _build_config(_environment_values(), resolved)


def load_config_from_path(path: Path, profile: str | None = None) -> LabConfig:
    """Settings from an explicit TOML file; the environment still fills keys it leaves out."""
    path = Path(path).expanduser()
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    values = _environment_values()
    values.update(_parse_toml_file(path))
    return _build_config(values, resolve_profile(profile))


def _build_config(values: dict[str, Value], profile: str) -> LabConfig:
    config = LabConfig(profile=profile)
    for key, raw in values.items():
        parser = _PARSERS.get(key)
        if parser is None:
            raise ConfigError("unknown setting", key_path=key)
        section, name = key.split(".", 1)
        setattr(getattr(config, section), name, parser(raw, key))
    try:
        config.grid.build()
        config.evolve.build()
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc
    return config


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SweepGrid(_Strict):
    r_max: float = Field(30.0, gt=0)
    n: int = Field(6000, ge=MIN_NODES)


class SweepEvolve(_Strict):
    dt: float = Field(1e-3, gt=0)
    t_final: float = Field(10.0, gt=0)
    monitor_stride: int = Field(10, ge=1)
    blowup_factor: float = Field(100.0, gt=1)
    scatter_window: tuple[float, float] | None = None
    scatter_tol: float = Field(1e-2, gt=0)
    max_refinements: int = Field(4, ge=0)

    @model_validator(mode="after")
    def _window_inside_run(self) -> SweepEvolve:
        if self.scatter_window is not None:
            t1, t2 = self.scatter_window
            if not 0 <= t1 < t2 <= self.t_final:
                raise ValueError("scatter_window must satisfy 0 <= t1 < t2 <= t_final")
        return self

    def build(self) -> EvolveConfig:
        return EvolveConfig(**self.model_dump())


class SweepConfig(_Strict):
    """Sweep description: couplings, soliton scales, the grid and the evolution settings."""

    a: list[float]
    lam: list[float] = Field(alias="lambda")
    grid: SweepGrid = Field(default_factory=SweepGrid)
    tol: float = Field(1e-6, gt=0, le=1e-3)
    threshold_tol: float = Field(1e-3, gt=0)
    evolve: SweepEvolve = Field(default_factory=SweepEvolve)
    archive: bool = False

    @field_validator("a")
    @classmethod
    def _above_hardy_edge(cls, values: list[float]) -> list[float]:
        for value in values:
            if not value > HARDY_EDGE:
                raise ValueError(f"coupling {value} must satisfy a > -1/4")
        return values

    @field_validator("lam")
    @classmethod
    def _positive_scales(cls, values: list[float]) -> list[float]:
        for value in values:
            if not value > 0:
                raise ValueError(f"soliton scale {value} must be positive")
        return values


def load_sweep_config(path: Path) -> SweepConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("sweep config not found", key_path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", key_path=str(path)) from exc
    try:
        return SweepConfig.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        key_path = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigError(first["msg"], key_path=key_path) from exc

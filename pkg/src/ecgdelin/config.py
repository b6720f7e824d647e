"""Structured run configuration: one YAML file, one section per subsystem.

Sections map onto the per-subsystem config dataclasses; keys absent from a
section keep their defaults, unknown sections or keys are rejected rather
than ignored so typos fail loudly. Every command writes an echo of the
effective configuration (plus the tool version) next to its outputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .augment import AugmentationConfig
from .errors import ConfigError
from .evaluation import MODES
from .network import NetworkConfig
from .synth import GenerationConfig
from .training import TrainerConfig


@dataclass(frozen=True)
class EvaluationConfig:
    mode: str = "single"
    threshold: float = 0.5
    sign_true_minus_pred: bool = False
    normalize_window: int = 256

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"evaluation mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0,1), got {self.threshold}")
        if self.normalize_window < 1:
            raise ConfigError("normalize_window must be >= 1")


@dataclass(frozen=True)
class PathsConfig:
    records_dir: str | None = None
    annotations_dir: str | None = None
    pool_dir: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None
    subject_map: str | None = None


@dataclass(frozen=True)
class SeedsConfig:
    """Optional per-subsystem seed overrides; None defers to the section."""

    generation: int | None = None
    training: int | None = None
    split: int | None = None
    augmentation: int | None = None


@dataclass(frozen=True)
class RunConfig:
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)


_SECTIONS = {
    "generation": GenerationConfig,
    "augmentation": AugmentationConfig,
    "network": NetworkConfig,
    "trainer": TrainerConfig,
    "evaluation": EvaluationConfig,
    "paths": PathsConfig,
    "seeds": SeedsConfig,
}


def _build_section(cls, data, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


def parse_config(data: dict | None) -> RunConfig:
    if data is None:
        return RunConfig()
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    built = {name: _build_section(cls, data.get(name), name) for name, cls in _SECTIONS.items()}
    return RunConfig(**built)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(data)


def config_to_dict(config: RunConfig) -> dict:
    # round-trip through JSON to turn tuples into plain lists for YAML
    return json.loads(json.dumps(dataclasses.asdict(config)))


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def write_run_metadata(out_dir, config: RunConfig, tool_version: str) -> None:
    """Drop the config echo + tool version into an output directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"tool": {"name": "ecgdelin", "version": tool_version}}
    payload.update(config_to_dict(config))
    (out_dir / "config_echo.yaml").write_text(
        yaml.safe_dump(payload, sort_keys=False), encoding="utf-8"
    )

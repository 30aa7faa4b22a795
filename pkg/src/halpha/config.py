"""Pipeline configuration: nested dataclasses, TOML files with dotted keys, CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .evaluation import MatchTolerances
from .events import IMPORTANCE_CLASSES, EventsConfig

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class PreprocessConfig:
    lambda1: float = 0.9
    lambda2: float = 0.1
    pyramid_levels: int = 5
    register: bool = True
    # per-frame solver budget for the two TV-L1 solves (warm-started across frames)
    max_iters: int = 200
    tol: float = 1e-3


@dataclass
class ClassModelConfig:
    components: int = 3
    temporal_alpha: float = 0.5
    seed: int = 0
    max_per_class: int = 20000


@dataclass
class SegmentConfig:
    lambda_data: float = 5.0
    max_iters: int = 300
    check_interval: int = 25
    tol: float = 1e-4


@dataclass
class IoConfig:
    model: str = ""
    output: str = ""
    debug_dir: str = ""


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    classmodel: ClassModelConfig = field(default_factory=ClassModelConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    events: EventsConfig = field(default_factory=EventsConfig)
    eval: MatchTolerances = field(default_factory=MatchTolerances)
    io: IoConfig = field(default_factory=IoConfig)

    def validate(self) -> None:
        p = self.preprocess
        if not p.lambda1 > p.lambda2 > 0:
            raise ConfigError("preprocess.lambda1 > preprocess.lambda2 > 0 is required")
        if p.pyramid_levels < 1 or p.max_iters < 1 or not p.tol > 0:
            raise ConfigError("preprocess solver settings out of range")
        if self.classmodel.components < 1:
            raise ConfigError("classmodel.components must be >= 1")
        if not 0 < self.classmodel.temporal_alpha <= 1:
            raise ConfigError("classmodel.temporal_alpha must lie in (0, 1]")
        s = self.segment
        if not s.lambda_data > 0 or s.max_iters < 1 or s.check_interval < 1 or not s.tol > 0:
            raise ConfigError("segment settings out of range")
        e = self.events
        if e.vote_window < 1 or e.min_area < 1 or e.eruption_window_s <= 0 or e.eruption_min_frames < 1:
            raise ConfigError("events settings out of range")
        if str(e.min_report_importance) not in IMPORTANCE_CLASSES:
            raise ConfigError(f"events.min_report_importance must be one of {', '.join(IMPORTANCE_CLASSES)}")

    # -- flattening ---------------------------------------------------------

    def flat(self) -> dict[str, Any]:
        out = {}
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                out[f"{sec.name}.{f.name}"] = getattr(obj, f.name)
        return out

    def set(self, key: str, value: Any) -> None:
        """Set ``section.name``; strings are converted to the field's type."""
        if key.count(".") != 1:
            raise ConfigError(f"config keys look like section.name, got {key!r}")
        sec_name, name = key.split(".")
        if sec_name not in {f.name for f in dataclasses.fields(self)}:
            raise ConfigError(f"unknown config section {sec_name!r}")
        section = getattr(self, sec_name)
        fields = {f.name: f for f in dataclasses.fields(section)}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(section, name)
        value = _coerce(key, value, current, fields[name].type)
        if section.__dataclass_params__.frozen:
            setattr(self, sec_name, dataclasses.replace(section, **{name: value}))
        else:
            setattr(section, name, value)


def _coerce(key: str, value: Any, current: Any, annotation: str) -> Any:
    ann = str(annotation)
    optional = "None" in ann
    if isinstance(value, str):
        text = value.strip()
        if optional and text.lower() in ("none", "off", "false", ""):
            return None
        try:
            if ann.startswith("bool"):
                if text.lower() in ("1", "true", "yes", "on"):
                    return True
                if text.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(text)
            if ann.startswith("int"):
                return int(text)
            if ann.startswith("float"):
                return float(text)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} as {ann}") from exc
        return text
    if value is False and optional and not ann.startswith("bool"):
        return None
    if ann.startswith("bool"):
        ok = isinstance(value, bool)
    elif ann.startswith("int"):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif ann.startswith("float"):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, (str, int)) and not isinstance(value, bool)
        value = str(value) if ok else value
    if not ok:
        raise ConfigError(f"{key}: {value!r} does not fit type {ann}")
    return value


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for sec, body in data.items():
            if not isinstance(body, dict):
                raise ConfigError(f"{path}: top-level key {sec!r} must be a section")
            for name, value in body.items():
                cfg.set(f"{sec}.{name}", value)
    for key, value in (overrides or {}).items():
        cfg.set(key, value)
    cfg.validate()
    return cfg


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_config(cfg: PipelineConfig) -> str:
    """Effective settings as TOML; a disabled optional setting is written as ``false``."""
    lines = []
    for sec in dataclasses.fields(cfg):
        lines.append(f"[{sec.name}]")
        obj = getattr(cfg, sec.name)
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            lines.append(f"{f.name} = {_toml_value(False if v is None else v)}")
        lines.append("")
    return "\n".join(lines)

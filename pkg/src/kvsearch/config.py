"""Run configuration: one JSON document with a section per subsystem.

Every leaf field can be overridden on the command line as
``--set section.key=value``; values are coerced to the field's type, and
unknown keys are rejected before anything runs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .engine import SearchConfig
from .policies import PolicyConfig
from .simenv import SimConfig


@dataclass
class BackendConfig:
    base_url: str = ""
    generate_timeout: float = 120.0
    score_timeout: float = 30.0
    embed_timeout: float = 30.0


@dataclass
class RunConfig:
    num_problems: int = 100
    parallelism: int = 4
    output_dir: str = "runs/out"
    problems_file: str = ""  # JSONL problems for http backends
    trace: bool = False


@dataclass
class AppConfig:
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        self.search.policy = self.policy
        self.search.validate()
        if self.run.num_problems < 0:
            raise ValueError("run.num_problems must be >= 0")
        if self.run.parallelism < 1:
            raise ValueError("run.parallelism must be >= 1")


class ConfigError(Exception):
    """Configuration could not be parsed or validated; exit code 2."""


_SECTIONS = {
    "policy": PolicyConfig,
    "search": SearchConfig,
    "sim": SimConfig,
    "backend": BackendConfig,
    "run": RunConfig,
}


def _coerce(raw, ftype, key):
    if ftype in ("int", int):
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected integer, got {raw!r}") from None
    if ftype in ("float", float):
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected number, got {raw!r}") from None
    if ftype in ("bool", bool):
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {raw!r}")
    if ftype in ("str", str):
        return str(raw)
    # union fields (keep_k: int | str, stop_condition: str | None)
    if isinstance(raw, str) and raw.lstrip("-").isdigit():
        return int(raw)
    return raw


def _field_map(cls):
    return {f.name: f for f in fields(cls)}


def set_option(cfg: AppConfig, dotted_key: str, raw_value) -> None:
    """Assign ``section.key = value`` with type checking."""
    parts = dotted_key.split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key must be section.key, got {dotted_key!r}")
    section, key = parts
    key = key.replace("-", "_")
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    target = getattr(cfg, section)
    fmap = _field_map(type(target))
    if key not in fmap or key == "policy":
        raise ConfigError(f"unknown config field {section}.{key}")
    value = _coerce(raw_value, fmap[key].type, f"{section}.{key}")
    if dataclasses.is_dataclass(type(target)) and getattr(type(target), "__dataclass_params__").frozen:
        # frozen sections (sim) are rebuilt with the new value
        setattr(cfg, section, dataclasses.replace(target, **{key: value}))
    else:
        setattr(target, key, value)


def load_config(path: str | None = None, overrides=()) -> AppConfig:
    """Build an AppConfig from an optional JSON file plus overrides."""
    cfg = AppConfig()
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config parse error in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        for section, body in doc.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in body.items():
                set_option(cfg, f"{section}.{key}", value)
    for dotted, value in overrides:
        set_option(cfg, dotted, value)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def config_to_dict(cfg: AppConfig) -> dict:
    out = {}
    for section in _SECTIONS:
        body = dataclasses.asdict(getattr(cfg, section))
        body.pop("policy", None)
        out[section] = body
    return out

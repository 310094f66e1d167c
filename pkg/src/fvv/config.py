"""Pipeline configuration: one schema shared by every command.

Values merge from three sources with fixed precedence: command-line flags
beat the environment (`FVV_CONFIG` names a JSON file) which beats a config
file given with --config, which beats built-in defaults. Unknown keys are
rejected by name so typos fail loudly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

FVV_CONFIG_ENV = "FVV_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    calibration_path: str | None = None
    background_model_path: str | None = None
    period_us: int = 33_333
    tolerance_us: int | None = None  # defaults to period/2 at use sites
    max_staleness: int = 5
    selection_lambda: float = 1.0  # meters of penalty per radian of axis angle
    hysteresis: float = 0.1
    blend_epsilon_m: float = 0.05
    splat_2x2: bool = True
    host: str = "127.0.0.1"
    media_port: int = 9500
    control_port: int = 9501
    ws_port: int = 9502
    output_encoding: str = "png"  # png | i420
    scene: str = "default"
    width: int = 640
    height: int = 360
    ticks: int = 300
    log_level: str = "info"

    def __post_init__(self):
        if self.output_encoding not in ("png", "i420"):
            raise ConfigError(f"output_encoding must be 'png' or 'i420', got {self.output_encoding!r}")
        if self.period_us <= 0:
            raise ConfigError("period_us must be positive")
        tol = self.effective_tolerance_us
        if not (0 < tol <= self.period_us / 2):
            raise ConfigError(f"tolerance_us must be in (0, period/2], got {self.tolerance_us}")

    @property
    def effective_tolerance_us(self) -> int:
        return self.tolerance_us if self.tolerance_us is not None else self.period_us // 2


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, value):
    t = _FIELD_TYPES[key]
    if value is None:
        return None
    try:
        if t in ("int", "int | None"):
            if isinstance(value, bool):
                raise TypeError
            return int(value)
        if t == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if t == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
            raise TypeError
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {t}") from None


def _load_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def parse_config(
    file_path=None,
    env: dict | None = None,
    overrides: dict | None = None,
) -> Config:
    """Build a Config with flag > env > file precedence.

    A --config flag names the file to load; when absent, the FVV_CONFIG
    environment variable may name one instead. Per-key `overrides` (from
    individual flags) win over whatever the file said.
    """
    env = os.environ if env is None else env
    merged: dict = {}

    path = file_path if file_path is not None else env.get(FVV_CONFIG_ENV)
    if path:
        merged.update(_load_file(path))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})

    unknown = sorted(set(merged) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}" + (f" (and {len(unknown) - 1} more)" if len(unknown) > 1 else ""))

    coerced = {k: _coerce(k, v) for k, v in merged.items()}
    return Config(**coerced)

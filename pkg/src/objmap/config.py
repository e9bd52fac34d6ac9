"""Run configuration: every tunable with its default, scene presets, file/env loading.

Config files are flat ``key = value`` text; ``#`` starts a comment. Environment
variables named ``OBJMAP_<KEY>`` (upper case) override file values. Unknown
keys are errors.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .detection import ViewpointBins
from .imm import ImmConfig

ENV_PREFIX = "OBJMAP_"

SCENES = {
    # measurement variance, association gate on 1 - GIoU, dynamic-model accel sigma
    "indoor": {"meas_var": 0.01, "gate": 0.25, "accel_noise": 0.2},
    "outdoor": {"meas_var": 0.25, "gate": 1.75, "accel_noise": 1.0},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scene: str = "outdoor"
    n_confirm: int = 3
    n_terminate: int = 3
    gate: float | None = None
    pregate: bool = False
    class_aware: bool = True
    meas_var: float | None = None
    accel_noise: float | None = None
    walk_noise: float = 0.01
    transition: tuple[float, float, float, float] = (0.6, 0.4, 0.4, 0.6)
    init_var: float = 1.0
    frame_rate: float = 10.0
    prune_iou: float = 0.5
    stale_after: int = 10
    persist_static: bool = True
    depth_noise_ref: float = 0.0
    image_width: int = 0
    image_height: int = 0
    elevation_min: float = -45.0
    elevation_max: float = 45.0
    decoder: str = "ellipsoid"
    resolution: int = 32
    truncation: float = 0.1

    def __post_init__(self):
        if self.scene not in SCENES:
            raise ConfigError(f"scene must be one of {sorted(SCENES)}, got {self.scene!r}")
        if self.n_confirm < 1 or self.n_terminate < 1:
            raise ConfigError("n_confirm and n_terminate must be >= 1")
        if self.stale_after < 1:
            raise ConfigError("stale_after must be >= 1")
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")
        if len(self.transition) != 4:
            raise ConfigError("transition needs 4 values (row-major 2x2)")
        for key in ("gate", "meas_var", "accel_noise"):
            v = getattr(self, key)
            if v is not None and v <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.resolution < 8:
            raise ConfigError("resolution must be >= 8")

    def resolved(self) -> "RunConfig":
        """Copy with scene-dependent defaults filled in."""
        preset = SCENES[self.scene]
        changes = {k: v for k, v in preset.items() if getattr(self, k) is None}
        return dataclasses.replace(self, **changes)

    @property
    def gate_value(self) -> float:
        return self.gate if self.gate is not None else SCENES[self.scene]["gate"]

    def imm_config(self) -> ImmConfig:
        r = self.resolved()
        try:
            return ImmConfig(
                transition=np.array(r.transition, dtype=float).reshape(2, 2),
                R=r.meas_var * np.eye(3),
                init_covariance=r.init_var * np.eye(6),
                accel_noise=r.accel_noise,
                walk_noise=r.walk_noise,
                nominal_dt=1.0 / r.frame_rate,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def viewpoint_bins(self) -> ViewpointBins:
        return ViewpointBins(elevation_min=self.elevation_min, elevation_max=self.elevation_max)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "str":
            return raw
        if kind.startswith("tuple"):
            return tuple(float(x) for x in raw.replace(";", ",").split(","))
        if raw.lower() in ("", "none", "auto"):
            return None
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def load_config(path=None, scene: str | None = None, env=None, **overrides) -> RunConfig:
    """Build a fully resolved config.

    Precedence, lowest first: built-in defaults, config file, environment,
    explicit ``scene`` and keyword overrides.
    """
    values: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        values.update(parse_config_text(text, str(p)))
    env = os.environ if env is None else env
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key from environment: {name}")
        values[key] = _parse_value(key, raw)
    if scene is not None:
        values["scene"] = scene
    for key, v in overrides.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = v
    try:
        return RunConfig(**values).resolved()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

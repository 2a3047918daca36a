"""Run configuration: a strict YAML-backed schema.

Unknown keys are errors, ``schema_version`` is required, and
parse -> serialize -> parse is the identity, so configs echoed into
checkpoints rebuild the exact same model.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field

import yaml

from .activations import ACTIVATIONS
from .errors import ConfigError

SCHEMA_VERSION = 1

WINDOW_RULES = ("per_mode", "square", "literal")
PRECISIONS = ("float64", "float32")


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    cr: float = 0.25
    channels: int = 3
    crop_size: int = 256
    encoder_windows: list[int] = field(default_factory=lambda: [20, 40, 80, 160])
    refine_windows: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    encoder_terms: int = 3
    refine_terms: int = 3
    num_blocks: int = 3
    activation: str = "mhg"
    block_activation: str = "mhg"
    hidden_channels: int = 3
    window_rule: str = "per_mode"
    lr: float = 5.0e-4
    steps: int = 30000
    batch: int = 2
    seed: int = 0
    precision: str = "float64"
    proxy_loss_weight: float = 0.1
    cycle_steps: int = 10000
    cycle_mult: float = 1.0
    eval_every: int = 0
    data_dir: str = ""
    eval_dir: str = ""
    out_dir: str = "runs"

    def validate(self) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}; this build "
                f"reads version {SCHEMA_VERSION}"
            )
        if not 0.0 < self.cr <= 1.0:
            raise ConfigError(f"cr must be in (0, 1], got {self.cr}")
        for name in ("channels", "crop_size", "encoder_terms", "refine_terms",
                     "batch", "cycle_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("num_blocks", "steps", "seed", "eval_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.hidden_channels < 1:
            raise ConfigError(f"hidden_channels must be >= 1, got {self.hidden_channels}")
        for name in ("encoder_windows", "refine_windows"):
            windows = getattr(self, name)
            if not windows or any(w < 1 for w in windows):
                raise ConfigError(f"{name} must be positive integers, got {windows}")
            if any(a >= b for a, b in zip(windows, windows[1:])):
                raise ConfigError(f"{name} must be strictly increasing, got {windows}")
        for name in ("activation", "block_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ConfigError(
                    f"{name} {getattr(self, name)!r} is not one of {sorted(ACTIVATIONS)}"
                )
        if self.window_rule not in WINDOW_RULES:
            raise ConfigError(
                f"window_rule {self.window_rule!r} is not one of {WINDOW_RULES}"
            )
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision {self.precision!r} is not one of {PRECISIONS}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.proxy_loss_weight < 0:
            raise ConfigError(
                f"proxy_loss_weight must be >= 0, got {self.proxy_loss_weight}"
            )
        if self.cycle_mult <= 0:
            raise ConfigError(f"cycle_mult must be positive, got {self.cycle_mult}")
        return self

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError(f"config must be a mapping, got {type(raw).__name__}")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "schema_version" not in raw:
            raise ConfigError("config is missing required key schema_version")
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in raw:
                continue
            value = raw[f.name]
            try:
                if f.name in ("encoder_windows", "refine_windows"):
                    value = [int(v) for v in value]
                elif f.type == "int":
                    value = int(value)
                elif f.type == "float":
                    value = float(value)
                elif f.type == "str":
                    value = str(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {f.name}: {exc}") from None
            kwargs[f.name] = value
        return cls(**kwargs).validate()

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, list) else value
        return out


def dumps_config(cfg: RunConfig) -> str:
    """Canonical YAML text (field order fixed by the schema)."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def loads_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return RunConfig.from_dict(raw)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of the canonical serialization."""
    return hashlib.sha256(dumps_config(cfg).encode("utf-8")).hexdigest()[:12]


def resolve_data_dir(path: str) -> str:
    """Resolve a config data path; relative paths honor MTSCS_DATA_ROOT."""
    root = os.environ.get("MTSCS_DATA_ROOT", "")
    if root and path and not os.path.isabs(path):
        return os.path.join(root, path)
    return path

"""Network and training configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from ..geometry.features import DEFAULT_FREQUENCIES
from ..geometry.types import FEATURE_CHANNELS
from ..io import yaml_load


class ConfigError(ValueError):
    pass


@dataclass
class NetworkConfig:
    n_points: int = 2500
    # downsampled levels, shallow to deep
    level_points: tuple = (321, 239, 144, 92, 35, 8)
    level_widths: tuple = (50, 60, 80, 110, 150, 200)
    full_width: int = 50
    k: int = 30
    heads: int = 4
    embed: int = 29
    frequencies: tuple = DEFAULT_FREQUENCIES
    # append positional encodings to the raw per-point features before encoding
    encode_positions: bool = True
    # one weight per output: full resolution first, then levels shallow to deep
    level_weights: tuple | None = None
    init_seed: int = 0
    # init variance gain of the displacement-head output layer; small keeps initial fields near zero
    head_gain: float = 1e-4

    def __post_init__(self):
        self.level_points = tuple(int(x) for x in self.level_points)
        self.level_widths = tuple(int(x) for x in self.level_widths)
        self.frequencies = tuple(float(x) for x in self.frequencies)
        if len(self.level_points) != len(self.level_widths) or not self.level_points:
            raise ConfigError("level_points and level_widths must be non-empty and equally long")
        if any(b >= a for a, b in zip(self.level_points, self.level_points[1:])):
            raise ConfigError("level point counts must strictly decrease with depth")
        if self.level_points[0] > self.n_points:
            raise ConfigError("first level cannot exceed n_points")
        if min(self.k, self.heads, self.embed, self.full_width, self.n_points) < 1:
            raise ConfigError("k, heads, embed, widths and n_points must be positive")
        if not self.frequencies:
            raise ConfigError("at least one encoding frequency is required")
        if self.level_weights is None:
            self.level_weights = (1.0,) * (self.n_levels + 1)
        self.level_weights = tuple(float(w) for w in self.level_weights)
        if len(self.level_weights) != self.n_levels + 1:
            raise ConfigError(f"level_weights needs {self.n_levels + 1} entries (full resolution plus each level)")

    @property
    def n_levels(self) -> int:
        return len(self.level_points)

    @property
    def encoding_width(self) -> int:
        return 6 * len(self.frequencies)

    @property
    def input_width(self) -> int:
        return len(FEATURE_CHANNELS) + (self.encoding_width if self.encode_positions else 0)

    def encoder_width(self, level: int) -> int:
        return self.input_width if level == 0 else self.level_widths[level - 1]

    def decoder_width(self, level: int) -> int:
        return self.full_width if level == 0 else self.level_widths[level - 1]

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 20
    max_steps: int | None = None
    lr_max: float = 1e-3
    lr_min: float = 4e-5
    pct_start: float = 0.3
    weight_decay: float = 1e-2
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError("need 0 < lr_min <= lr_max")

    def to_dict(self) -> dict:
        return asdict(self)


def toy_network(**overrides) -> NetworkConfig:
    """Small configuration for tests and smoke runs."""
    base = dict(n_points=60, level_points=(24, 8), level_widths=(12, 16), full_width=12, k=6, heads=2, embed=4,
                frequencies=(0.5, 2.0))
    base.update(overrides)
    return NetworkConfig(**base)


def _pick(cls, raw: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**raw)


def load_config(path: str | Path) -> tuple[NetworkConfig, TrainConfig]:
    """YAML file with optional ``network`` and ``train`` sections."""
    try:
        raw = yaml_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    try:
        return _pick(NetworkConfig, raw.get("network") or {}), _pick(TrainConfig, raw.get("train") or {})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

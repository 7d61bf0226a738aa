"""Run configuration: one JSON file drives every command.

Sections map onto dataclasses; unknown keys anywhere are rejected so typos
fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .scene import SceneGenConfig


@dataclass
class ModelConfig:
    d: int = 64            # shared feature width
    l_graph: int = 4       # gated graph conv layers
    k_modes: int = 6
    tau_lane: float = 10.0      # lane -> actor attention radius, meters
    tau_boundary: float = 10.0  # boundary -> actor
    tau_actor: float = 30.0     # actor -> actor
    input_scale: float = 0.1    # meters -> network units for raw coordinates
    output_scale: float = 10.0  # network units -> meters on regression heads

    def validate(self):
        if self.d < 4 or self.d % 2:
            raise ConfigError(f"model.d must be an even int >= 4, got {self.d}")
        if self.l_graph < 1:
            raise ConfigError(f"model.l_graph must be >= 1, got {self.l_graph}")
        if self.k_modes < 1:
            raise ConfigError(f"model.k_modes must be >= 1, got {self.k_modes}")
        for name in ("tau_lane", "tau_boundary", "tau_actor"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if self.input_scale <= 0:
            raise ConfigError("model.input_scale must be positive")
        if self.output_scale <= 0:
            raise ConfigError("model.output_scale must be positive")


@dataclass
class TrainConfig:
    batch_size: int = 32
    total_epochs: int = 100
    stage2_start_epoch: int = 6
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    periods: tuple[int, ...] = (6, 12, 24, 48)
    precision: str = "float32"

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.total_epochs < 1:
            raise ConfigError("train.total_epochs must be >= 1")
        if self.stage2_start_epoch != self.periods[0]:
            raise ConfigError(
                f"train.stage2_start_epoch must equal the first restart "
                f"({self.periods[0]}), got {self.stage2_start_epoch}")
        if not (0 < self.lr_min <= self.lr_max):
            raise ConfigError("train lr bounds must satisfy 0 < lr_min <= lr_max")
        if any(p < 1 for p in self.periods):
            raise ConfigError(f"train.periods must be positive, got {self.periods}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"train.precision must be float32/float64, got {self.precision!r}")


@dataclass
class DataConfig:
    n_scenes: int = 8
    gen: SceneGenConfig = field(default_factory=SceneGenConfig)

    def validate(self):
        if self.n_scenes < 1:
            raise ConfigError("data.n_scenes must be >= 1")
        self.gen.validate()


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.data.validate()
        self.model.validate()
        self.train.validate()
        return self


_TUPLE_FIELDS = {"periods", "curvature_range", "speed_range"}
_NESTED = {"gen": SceneGenConfig, "data": DataConfig, "model": ModelConfig,
           "train": TrainConfig}


def _from_dict(cls, obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(obj) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, val in obj.items():
        sub = f"{path}.{name}" if path else name
        if name in _NESTED:
            kwargs[name] = _from_dict(_NESTED[name], val, sub)
        elif name in _TUPLE_FIELDS:
            if not isinstance(val, (list, tuple)):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[name] = tuple(val)
        else:
            kwargs[name] = val
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


def load_config(source) -> RunConfig:
    """Parse a RunConfig from a JSON string/bytes or a dict, then validate."""
    if isinstance(source, (str, bytes)):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    cfg = _from_dict(RunConfig, source, "")
    cfg.validate()
    return cfg


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of the full config, recorded in outputs."""
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

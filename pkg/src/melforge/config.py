"""Run configuration: strict JSON with dataclass sections.

Unknown keys are rejected at every level so typos fail loudly. CLI flags
override individual fields after the file is loaded; every command echoes
the effective configuration into its output directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import SOLVERS
from .errors import ConfigError

ENV_SEED = "MELFORGE_SEED"


@dataclass
class FeatureConfig:
    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-5

    @property
    def hop_seconds(self) -> float:
        return self.hop / self.sample_rate


@dataclass
class ScheduleConfig:
    beta0: float = 0.05
    beta1: float = 19.95
    t_min: float = 1e-3
    n_steps: int = 25
    solver: str = "expint2"

    def __post_init__(self) -> None:
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")


@dataclass
class ModelConfig:
    depth: int = 3
    channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    time_embed_dim: int = 64
    groupnorm_groups: int = 4


@dataclass
class DegradationConfig:
    snr_db_range: list[float] = field(default_factory=lambda: [0.0, 30.0])
    clip_quantile_range: list[float] = field(default_factory=lambda: [0.6, 0.98])
    cutoff_hz_range: list[float] = field(default_factory=lambda: [2000.0, 8000.0])
    stage_probabilities: list[float] = field(default_factory=lambda: [0.5, 0.5, 0.5, 0.5])
    noise_dir: str | None = None
    rir_dir: str | None = None


@dataclass
class TrainingConfig:
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 8
    epochs: int = 4
    steps_per_epoch: int = 250
    segment_frames: int = 128
    seed: int | None = None


@dataclass
class SplitConfig:
    validation_ids: list[str] | None = None
    validation_fraction: float = 0.0
    seed: int = 0


@dataclass
class PathsConfig:
    workdir: str = "work"
    manifest: str | None = None


@dataclass
class RunConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def resolve_seed(self, cli_seed: int | None = None) -> int:
        """Priority: CLI flag, config value, MELFORGE_SEED env, then 0."""
        if cli_seed is not None:
            return cli_seed
        if self.training.seed is not None:
            return self.training.seed
        env = os.environ.get(ENV_SEED)
        if env is not None:
            try:
                return int(env)
            except ValueError as exc:
                raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}") from exc
        return 0


def _build(cls, obj: dict, context: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{context}: expected an object, got {type(obj).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc


_SECTION_TYPES = {
    "features": FeatureConfig,
    "schedule": ScheduleConfig,
    "model": ModelConfig,
    "degradation": DegradationConfig,
    "training": TrainingConfig,
    "split": SplitConfig,
    "paths": PathsConfig,
}


def load_config(path: str | Path) -> RunConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(obj) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    kwargs = {k: _build(_SECTION_TYPES[k], v, k) for k, v in obj.items()}
    return RunConfig(**kwargs)


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def save_config(path: str | Path, config: RunConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True))

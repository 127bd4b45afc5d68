#!/usr/bin/env python3
"""
Run configuration for seld_einv2.

A run is described by one YAML document with the sections dataset, features,
model, loss, train and eval. Every field has a default and unknown keys are
rejected, so a config file can never silently carry a typo.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from seld_einv2.errors import ConfigError

CONFIG_DIR = Path(__file__).parent / "config"
DATA_ROOT_ENV = "SELD_DATA_ROOT"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DatasetConfig(_Section):
    """Synthetic scene specification and dataset location."""
    root: str = Field(default_factory=lambda: os.environ.get(DATA_ROOT_ENV, "data/synth"),
                      description="Dataset directory (defaults to $SELD_DATA_ROOT)")
    splits: Dict[str, int] = Field(default={"train": 200, "test": 50}, description="Clips per split")
    clip_length: float = Field(default=60.0, gt=0, description="Clip length in seconds")
    n_classes: int = Field(default=14, ge=1, le=14)
    max_polyphony: int = Field(default=2, ge=1)
    event_duration: Tuple[float, float] = Field(default=(0.5, 4.0), description="Event duration range in seconds")
    event_rate: float = Field(default=0.5, ge=0, description="Poisson onset rate in events per second")
    snr_db: Tuple[float, float] = Field(default=(10.0, 30.0), description="SNR range against diffuse noise")
    azimuth_range: Tuple[int, int] = Field(default=(-180, 180), description="Half-open azimuth range in degrees")
    elevation_range: Tuple[int, int] = Field(default=(-45, 45), description="Closed elevation range in degrees")
    trajectory: Literal["static"] = "static"
    seed: int = 0
    workers: int = Field(default=1, ge=1)

    @field_validator("event_duration", "snr_db", "azimuth_range", "elevation_range")
    @classmethod
    def validate_range(cls, v):
        """Ranges must be ordered"""
        if v[0] > v[1]:
            raise ValueError(f"Range lower bound exceeds upper bound: {v}")
        return v

    @field_validator("azimuth_range")
    @classmethod
    def validate_azimuth(cls, v):
        if v[0] < -180 or v[1] > 180:
            raise ValueError(f"Azimuth range must lie within [-180, 180): {v}")
        return v

    @field_validator("elevation_range")
    @classmethod
    def validate_elevation(cls, v):
        if v[0] < -45 or v[1] > 45:
            raise ValueError(f"Elevation range must lie within [-45, 45]: {v}")
        return v

    @field_validator("event_duration")
    @classmethod
    def validate_duration(cls, v):
        if v[0] < 0.1:
            raise ValueError(f"Events must last at least one label frame (0.1 s): {v}")
        return v

    @property
    def n_clips(self) -> int:
        return sum(self.splits.values())


class FeatureConfig(_Section):
    """STFT / mel front end."""
    sample_rate: int = 24000
    fft_size: int = 1024
    hop: int = 600
    n_mels: int = 256
    fmin: float = 0.0
    fmax: Optional[float] = Field(default=None, description="Defaults to sample_rate / 2")
    mel_scale: Literal["htk"] = "htk"
    mel_norm: Literal["peak", "area"] = "peak"
    log_eps: float = 1e-10
    intensity_eps: float = 1e-8
    segment_seconds: float = 4.0
    label_hop: float = 0.1

    @model_validator(mode="after")
    def validate_grid(self):
        frames = self.segment_seconds * self.sample_rate / self.hop
        labels = self.segment_seconds / self.label_hop
        if abs(frames - round(frames)) > 1e-9 or abs(labels - round(labels)) > 1e-9:
            raise ValueError("segment_seconds must hold a whole number of STFT hops and label frames")
        return self

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def upper_frequency(self) -> float:
        return self.sample_rate / 2.0 if self.fmax is None else self.fmax

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def frames_per_segment(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate / self.hop))

    @property
    def labels_per_segment(self) -> int:
        return int(round(self.segment_seconds / self.label_hop))


class MhsaConfig(_Section):
    layers: int = Field(default=2, ge=1)
    heads: int = Field(default=8, ge=1)
    model_dim: int = 512
    scaled_logits: bool = False
    residual_norm: bool = True


class ModelConfig(_Section):
    """EINV2 architecture; see the architecture table in docs/ARCHITECTURE.md."""
    n_classes: int = 14
    n_tracks: int = Field(default=2, ge=1)
    ps_mode: Literal["none", "hard", "soft"] = "soft"
    output_format: Literal["trackwise", "seldnet"] = "trackwise"
    widths: List[int] = [64, 128, 256, 512]
    width_divisor: int = Field(default=1, ge=1)
    pools: List[Tuple[int, int]] = [(2, 2), (2, 2), (1, 2), (1, 2)]
    mhsa: MhsaConfig = MhsaConfig()
    cross_stitch_init: Tuple[float, float] = (0.9, 0.1)
    sed_channels: int = 4
    doa_channels: int = 7
    dtype: Literal["float32", "float64"] = "float32"

    @model_validator(mode="after")
    def validate_shapes(self):
        if len(self.widths) != len(self.pools):
            raise ValueError("widths and pools must have the same length")
        for w in self.widths:
            if w % self.width_divisor:
                raise ValueError(f"width {w} is not divisible by width_divisor {self.width_divisor}")
        if self.mhsa.model_dim % self.mhsa.heads:
            raise ValueError(f"model_dim {self.mhsa.model_dim} is not divisible by heads {self.mhsa.heads}")
        if self.mhsa.model_dim != self.scaled_widths[-1]:
            raise ValueError(
                f"model_dim {self.mhsa.model_dim} must equal the last conv width {self.scaled_widths[-1]}"
            )
        return self

    @property
    def scaled_widths(self) -> List[int]:
        return [w // self.width_divisor for w in self.widths]

    @property
    def time_pooling(self) -> int:
        total = 1
        for pt, _ in self.pools:
            total *= pt
        return total

    @property
    def freq_pooling(self) -> int:
        total = 1
        for _, pf in self.pools:
            total *= pf
        return total


class LossConfig(_Section):
    method: Literal["tpit", "cpit", "fixed"] = "tpit"
    beta: float = Field(default=1.0, ge=0)
    task: Literal["joint", "sed", "doa"] = "joint"


class AugmentConfig(_Section):
    rotate: bool = False
    spec_augment: bool = False
    n_time_masks: int = 2
    n_freq_masks: int = 2
    max_time_width: int = 8
    max_freq_width: int = 32


class TrainConfig(_Section):
    """Optimisation schedule; full-scale values are the defaults."""
    optimizer: Literal["adamw"] = "adamw"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    lr_phase1: float = 0.0005
    lr_phase2: float = 0.00005
    epochs_phase1: int = 90
    epochs_phase2: int = 10
    epoch_scale: float = Field(default=1.0, gt=0)
    batch_size: int = Field(default=32, ge=1)
    grad_clip: float = 5.0
    max_steps: Optional[int] = Field(default=None, description="Stop after this many optimizer steps")
    eval_every: int = Field(default=1, ge=1, description="Evaluate every N epochs")
    max_consecutive_skips: int = 10
    seed: int = 0
    n_trials: int = Field(default=1, ge=1)
    num_workers: int = Field(default=0, ge=0, description="Prefetch workers; 0 loads batches inline")
    run_dir: str = "runs/einv2"
    augment: AugmentConfig = AugmentConfig()

    @property
    def total_epochs(self) -> int:
        return max(1, int(round((self.epochs_phase1 + self.epochs_phase2) * self.epoch_scale)))

    @property
    def phase2_start(self) -> int:
        ratio = self.epochs_phase1 / (self.epochs_phase1 + self.epochs_phase2)
        return int(round(self.total_epochs * ratio))


class EvalConfig(_Section):
    split: str = "test"
    threshold: float = Field(default=0.5, gt=0, lt=1)
    doa_threshold: float = Field(default=20.0, gt=0)
    segment_seconds: float = Field(default=1.0, description="Scoring segment length; label_hop gives frame mode")
    oracle: Literal["none", "sed", "doa"] = "none"


class RunConfig(_Section):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    features: FeatureConfig = FeatureConfig()
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()


def _canonical_hash(section: BaseModel) -> str:
    blob = json.dumps(section.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def config_hash(model_config: ModelConfig) -> str:
    """sha256 over the canonical JSON of the model section."""
    return _canonical_hash(model_config)


def feature_hash(feature_config: FeatureConfig) -> str:
    return _canonical_hash(feature_config)


def parse_run_config(text: str) -> RunConfig:
    """Validate a YAML document into a RunConfig."""
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML: {e}")
    if not isinstance(data, dict):
        raise ConfigError("A run config must be a mapping of sections")
    try:
        return RunConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"Invalid config key {location}: {first['msg']}")


def override_run_config(config: RunConfig, updates: Dict[str, Any]) -> RunConfig:
    """Copy of ``config`` with dotted keys (``section.field``) replaced and revalidated."""
    data = config.model_dump(mode="json")
    for key, value in updates.items():
        section, _, name = key.partition(".")
        if section not in data or not isinstance(data[section], dict) or not name:
            raise ConfigError(f"Invalid config key {key}: unknown section")
        data[section][name] = value
    return parse_run_config(yaml.safe_dump(data))


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """
    Read and validate a run config file

    Args:
        path: YAML file; None or a bare preset name ("tiny") selects a shipped preset

    Returns:
        Validated RunConfig object
    """
    if path is None:
        path = "default"
    file_path = Path(path)
    if not file_path.exists() and (CONFIG_DIR / f"{path}.yaml").exists():
        file_path = CONFIG_DIR / f"{path}.yaml"
    if not file_path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    return parse_run_config(file_path.read_text(encoding="utf-8"))


def dump_run_config(config: RunConfig) -> str:
    """Serialise a RunConfig to YAML (parse(dump(c)) == c)."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False, default_flow_style=None)


def save_run_config(config: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_run_config(config), encoding="utf-8")
    return path

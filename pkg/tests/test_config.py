#!/usr/bin/env python3
"""Tests for run configuration loading, validation and hashing."""

import os
import sys

import pytest
from pydantic import ValidationError

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.errors import ConfigError
from seld_einv2.run_config import (
    DATA_ROOT_ENV,
    DatasetConfig,
    FeatureConfig,
    ModelConfig,
    RunConfig,
    config_hash,
    dump_run_config,
    feature_hash,
    load_run_config,
    override_run_config,
    parse_run_config,
    save_run_config,
)


class TestPresets:
    """Test suite for the shipped presets."""

    def test_default_preset(self):
        config = load_run_config()
        assert config.features.n_mels == 256
        assert config.model.scaled_widths == [64, 128, 256, 512]
        assert config.train.total_epochs == 100
        assert config.train.phase2_start == 90

    def test_tiny_preset(self):
        config = load_run_config("tiny")
        assert config.model.scaled_widths == [8, 16, 32, 64]
        assert config.model.mhsa.heads == 2
        assert config.train.total_epochs == 20
        assert config.train.phase2_start == 18

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError, match="Config file not found"):
            load_run_config("no/such/config.yaml")


class TestValidation:
    """Test suite for key and value validation."""

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="Invalid config key model.n_layers"):
            parse_run_config("model:\n  n_layers: 3\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="Invalid config key"):
            parse_run_config("optimizer:\n  lr: 0.1\n")

    def test_not_a_mapping(self):
        with pytest.raises(ConfigError, match="mapping"):
            parse_run_config("- a\n- b\n")

    def test_invalid_yaml(self):
        with pytest.raises(ConfigError, match="Invalid YAML"):
            parse_run_config("model: [unclosed\n")

    def test_empty_document_is_defaults(self):
        assert parse_run_config("").model == ModelConfig()

    def test_range_order(self):
        with pytest.raises(ValidationError):
            DatasetConfig(snr_db=(30.0, 10.0))

    def test_elevation_range(self):
        with pytest.raises(ValidationError):
            DatasetConfig(elevation_range=(-60, 45))

    def test_short_events(self):
        with pytest.raises(ValidationError):
            DatasetConfig(event_duration=(0.05, 1.0))

    def test_segment_grid(self):
        FeatureConfig(segment_seconds=2.0)
        with pytest.raises(ValidationError, match="whole number"):
            FeatureConfig(segment_seconds=4.01)

    def test_model_dim_follows_widths(self):
        with pytest.raises(ValidationError, match="model_dim"):
            ModelConfig(width_divisor=8)
        ModelConfig(width_divisor=8, mhsa={"layers": 2, "heads": 2, "model_dim": 64})

    def test_width_divisor(self):
        with pytest.raises(ValidationError, match="divisible"):
            ModelConfig(width_divisor=3)

    def test_assignment_is_validated(self):
        config = RunConfig()
        with pytest.raises(ValidationError):
            config.loss.method = "upit"

    def test_segment_geometry(self):
        features = FeatureConfig()
        assert features.segment_samples == 96000
        assert features.frames_per_segment == 160
        assert features.labels_per_segment == 40
        assert features.n_bins == 513


class TestOverridesAndFiles:
    """Test suite for dotted overrides, dumping and the data-root variable."""

    def test_override(self):
        config = override_run_config(RunConfig(), {"loss.method": "cpit", "train.batch_size": 4})
        assert config.loss.method == "cpit"
        assert config.train.batch_size == 4

    def test_override_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            override_run_config(RunConfig(), {"trainer.batch_size": 4})

    def test_override_revalidates(self):
        with pytest.raises(ConfigError, match="Invalid config key"):
            override_run_config(RunConfig(), {"eval.threshold": 1.5})

    def test_dump_parse_round_trip(self):
        config = load_run_config("tiny")
        assert parse_run_config(dump_run_config(config)) == config

    def test_save_and_load(self, tmp_path):
        config = override_run_config(RunConfig(), {"model.ps_mode": "hard"})
        path = save_run_config(config, tmp_path / "nested" / "config.yaml")
        assert load_run_config(str(path)) == config

    def test_data_root_from_environment(self, monkeypatch):
        monkeypatch.setenv(DATA_ROOT_ENV, "/datasets/seld")
        assert DatasetConfig().root == "/datasets/seld"
        monkeypatch.delenv(DATA_ROOT_ENV)
        assert DatasetConfig().root == "data/synth"


class TestHashes:
    """Test suite for config hashing."""

    def test_stable(self):
        assert config_hash(ModelConfig()) == config_hash(ModelConfig())
        assert len(config_hash(ModelConfig())) == 64

    def test_sensitive_to_model_fields(self):
        assert config_hash(ModelConfig()) != config_hash(ModelConfig(ps_mode="hard"))

    def test_feature_hash(self):
        assert feature_hash(FeatureConfig()) != feature_hash(FeatureConfig(n_mels=64))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

#!/usr/bin/env python3
"""Tests for parameter naming, initialisation and the checkpoint container."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.diffcore.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from seld_einv2.errors import CheckpointError
from seld_einv2.gradsuite import tiny_model_config
from seld_einv2.model.einv2 import build_model
from seld_einv2.run_config import config_hash

HASH = "ab" * 32


class TestCheckpointFile:
    """Test suite for save_checkpoint / load_checkpoint."""

    def test_round_trip(self, tmp_path, rng):
        entries = {
            "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
            "b.running_var": rng.standard_normal(5),
            "step": np.array([7], dtype=np.int64),
        }
        meta = {"epoch": 3, "best": {"ER": 0.5}}
        path = save_checkpoint(tmp_path / "ckpt", entries, HASH, meta)
        loaded, stored_hash, loaded_meta = load_checkpoint(path)
        assert stored_hash == HASH
        assert loaded_meta == meta
        assert list(loaded) == list(entries)
        for name, value in entries.items():
            assert loaded[name].dtype == value.dtype
            np.testing.assert_array_equal(loaded[name], value)

    def test_magic_header(self, tmp_path):
        path = save_checkpoint(tmp_path / "ckpt", {"x": np.zeros(2)}, HASH)
        assert path.read_bytes()[:8] == MAGIC

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nope")

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"hello world, not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = save_checkpoint(tmp_path / "ckpt", {"x": np.zeros((10, 10))}, HASH)
        path.write_bytes(path.read_bytes()[:120])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_hash_length(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "ckpt", {}, "abc")

    def test_unsupported_dtype(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "ckpt", {"x": np.zeros(2, dtype=np.int8)}, HASH)


class TestModelState:
    """Test suite for model state through a checkpoint."""

    def test_initialisation_depends_on_seed_and_name(self):
        config = tiny_model_config()
        a = build_model(config, seed=5).state_dict()
        b = build_model(config, seed=5).state_dict()
        c = build_model(config, seed=6).state_dict()
        name = next(n for n in a if n.endswith("conv1.weight"))
        np.testing.assert_array_equal(a[name], b[name])
        assert not np.array_equal(a[name], c[name])

    def test_model_round_trip(self, tmp_path):
        config = tiny_model_config()
        model = build_model(config, seed=1)
        path = save_checkpoint(tmp_path / "ckpt", model.state_dict(), config_hash(config))
        entries, stored_hash, _ = load_checkpoint(path)
        restored = build_model(config, seed=99)
        restored.load_state_dict(entries)
        assert stored_hash == config_hash(config)
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(restored.state_dict()[name], value)

    def test_strict_load_rejects_missing_entries(self):
        model = build_model(tiny_model_config(), seed=0)
        state = dict(model.state_dict())
        state.pop(next(iter(state)))
        with pytest.raises(KeyError):
            model.load_state_dict(state)

    def test_config_hash_tracks_model_section(self):
        assert config_hash(tiny_model_config()) == config_hash(tiny_model_config())
        assert config_hash(tiny_model_config()) != config_hash(tiny_model_config(ps_mode="hard"))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

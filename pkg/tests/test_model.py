#!/usr/bin/env python3
"""Tests for the EINV2 network: shapes, sharing modes and output formats."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.errors import ConfigError
from seld_einv2.features import FeatureClip
from seld_einv2.gradsuite import tiny_model_config
from seld_einv2.model.einv2 import SeldnetPrediction, TrackPrediction, build_model, einv2_forward, predict_batch


def inputs(rng, batch=2, frames=16, bins=16):
    return rng.standard_normal((batch, 4, frames, bins)), rng.standard_normal((batch, 7, frames, bins))


class TestShapes:
    """Test suite for forward shapes."""

    def test_trackwise(self, rng):
        model = build_model(tiny_model_config(), seed=0).eval()
        sed, doa = model(*inputs(rng))
        assert sed.shape == (2, 4, 2, 14)
        assert doa.shape == (2, 4, 2, 3)
        assert np.all((sed.data > 0) & (sed.data < 1))
        assert np.all(np.abs(doa.data) < 1)

    def test_seldnet(self, rng):
        model = build_model(tiny_model_config(output_format="seldnet"), seed=0).eval()
        sed, doa = model(*inputs(rng))
        assert sed.shape == (2, 4, 14)
        assert doa.shape == (2, 4, 14, 3)

    def test_three_tracks(self, rng):
        model = build_model(tiny_model_config(n_tracks=3), seed=0).eval()
        sed, _ = model(*inputs(rng, batch=1))
        assert sed.shape == (1, 4, 3, 14)

    def test_full_segment(self, rng):
        model = build_model(tiny_model_config(), seed=0).eval()
        sed, doa = model(*inputs(rng, batch=1, frames=160, bins=64))
        assert sed.shape == (1, 40, 2, 14)
        assert doa.shape == (1, 40, 2, 3)

    def test_single_clip_forward(self, rng):
        model = build_model(tiny_model_config(), seed=0).eval()
        sed, doa = inputs(rng, batch=1)
        pred = einv2_forward(model, FeatureClip(sed_input=sed[0], doa_input=doa[0]))
        assert isinstance(pred, TrackPrediction)
        assert pred.n_frames == 4

    def test_predict_batch_splits_examples(self, rng):
        model = build_model(tiny_model_config(output_format="seldnet"), seed=0).eval()
        preds = predict_batch(model, *inputs(rng, batch=3))
        assert len(preds) == 3
        assert all(isinstance(p, SeldnetPrediction) for p in preds)


class TestInputChecks:
    """Test suite for input validation."""

    def setup_method(self):
        self.model = build_model(tiny_model_config(), seed=0)

    def test_bins_not_divisible(self, rng):
        with pytest.raises(ConfigError, match="pooling"):
            self.model(*inputs(rng, bins=20))

    def test_frames_not_divisible(self, rng):
        with pytest.raises(ConfigError):
            self.model(*inputs(rng, frames=18))

    def test_wrong_channels(self, rng):
        sed, doa = inputs(rng)
        with pytest.raises(ConfigError, match="channels"):
            self.model(doa, doa)

    def test_unbatched(self, rng):
        sed, doa = inputs(rng)
        with pytest.raises(ConfigError):
            self.model(sed[0], doa[0])


class TestSharingModes:
    """Test suite for soft / hard / none parameter sharing."""

    def test_soft_with_identity_stitch_equals_none(self, rng):
        soft = build_model(tiny_model_config(ps_mode="soft", cross_stitch_init=(1.0, 0.0)), seed=4).eval()
        none = build_model(tiny_model_config(ps_mode="none"), seed=4).eval()
        x = inputs(rng)
        sed_a, doa_a = soft(*x)
        sed_b, doa_b = none(*x)
        np.testing.assert_allclose(sed_a.data, sed_b.data, atol=1e-12)
        np.testing.assert_allclose(doa_a.data, doa_b.data, atol=1e-12)

    def test_hard_ignores_sed_input(self, rng):
        model = build_model(tiny_model_config(ps_mode="hard"), seed=0).eval()
        sed, doa = inputs(rng)
        a, _ = model(sed, doa)
        b, _ = model(np.zeros_like(sed), doa)
        np.testing.assert_array_equal(a.data, b.data)

    def test_parameter_counts(self):
        counts = {mode: build_model(tiny_model_config(ps_mode=mode)).num_parameters()
                  for mode in ("hard", "none", "soft")}
        assert counts["hard"] < counts["none"] < counts["soft"]

    def test_stitches_only_in_soft(self):
        names = set(build_model(tiny_model_config(ps_mode="soft")).state_dict())
        assert any(n.startswith("stitches.") for n in names)
        assert not any("stitch" in n for n in build_model(tiny_model_config(ps_mode="none")).state_dict())

    def test_eval_mode_is_batch_independent(self, rng):
        model = build_model(tiny_model_config(), seed=0).eval()
        sed, doa = inputs(rng, batch=3)
        batched, _ = model(sed, doa)
        single, _ = model(sed[1:2], doa[1:2])
        np.testing.assert_allclose(batched.data[1], single.data[0], atol=1e-12)

    def test_attention_maps(self, rng):
        model = build_model(tiny_model_config(), seed=0).eval()
        model.set_keep_attention(True)
        model(*inputs(rng, batch=1))
        maps = model.attention_maps()
        assert maps
        assert all(m.shape[-2:] == (4, 4) for m in maps.values())


class TestConfigValidation:
    """Test suite for ModelConfig shape checks."""

    def test_model_dim_must_match_last_width(self):
        from seld_einv2.run_config import MhsaConfig, ModelConfig

        with pytest.raises(ValueError):
            ModelConfig(width_divisor=8, mhsa=MhsaConfig(model_dim=128, heads=2))

    def test_width_divisor(self):
        from seld_einv2.run_config import ModelConfig

        with pytest.raises(ValueError):
            ModelConfig(width_divisor=3)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

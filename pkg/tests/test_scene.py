#!/usr/bin/env python3
"""Tests for synthetic scene generation, segmentation and SpecAugment."""

import logging
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.data.augment import MaskPlan, apply_masks, sample_masks, spec_augment
from seld_einv2.data.foa import direction_of, unit_vector
from seld_einv2.data.labels import FoaClip, LabelRow, rows_by_frame
from seld_einv2.data.scene import (
    ScheduledEvent,
    class_fundamental,
    class_signature,
    event_rows,
    render_events,
    schedule_events,
    synth_clip,
    synth_scene,
)
from seld_einv2.data.segment import n_segments, segment_clips
from seld_einv2.features import featurize_waveform
from seld_einv2.metrics import angular_distance
from seld_einv2.run_config import AugmentConfig, DatasetConfig, FeatureConfig


class TestSchedule:
    """Test suite for event placement and labels."""

    def test_event_rows_on_grid(self):
        rows = event_rows([ScheduledEvent(class_index=3, onset_frame=20, n_frames=10, azimuth=60, elevation=-30)])
        assert [r.frame for r in rows] == list(range(20, 30))
        assert {(r.class_index, r.azimuth, r.elevation) for r in rows} == {(3, 60.0, -30.0)}

    def test_zero_rate_is_silent(self, rng):
        spec = DatasetConfig(event_rate=0.0, clip_length=2.0)
        clip = synth_clip(spec, FeatureConfig(), rng, "silent")
        assert clip.rows == []
        assert np.all(clip.audio == 0)

    def test_polyphony_cap(self, rng, caplog):
        spec = DatasetConfig(event_rate=8.0, clip_length=30.0, event_duration=(1.0, 3.0))
        with caplog.at_level(logging.WARNING):
            events = schedule_events(spec, 300, 0.1, rng)
        rows = event_rows(events)
        assert max(len(frame_rows) for frame_rows in rows_by_frame(rows).values()) <= 2
        assert "thinned" in caplog.text

    def test_first_free_track(self, rng):
        spec = DatasetConfig(event_rate=2.0, clip_length=20.0)
        for event in schedule_events(spec, 200, 0.1, rng):
            assert event.track in (0, 1)
        rows = event_rows(schedule_events(spec, 200, 0.1, rng))
        for frame_rows in rows_by_frame(rows).values():
            assert len({r.track for r in frame_rows}) == len(frame_rows)

    def test_class_signatures_distinct(self, rng):
        assert class_fundamental(0) == 220.0
        a = class_signature(0, 2400, 24000, np.random.default_rng(0))
        b = class_signature(5, 2400, 24000, np.random.default_rng(0))
        assert not np.allclose(a, b)
        assert np.sqrt(np.mean(a ** 2)) == pytest.approx(1.0)

    def test_intensity_recovers_label_direction(self, rng):
        event = ScheduledEvent(class_index=2, onset_frame=5, n_frames=20, azimuth=-70, elevation=25)
        audio = render_events([event], 48000, 24000, 0.1, rng, snr_db=30.0)
        _, intensity = featurize_waveform(audio, FeatureConfig(n_mels=64))
        mean = intensity[:, 25:45, :].mean(axis=(1, 2))
        azimuth, elevation = direction_of(mean)
        assert angular_distance(unit_vector(azimuth, elevation), unit_vector(-70, 25)) < 5.0


class TestSynthScene:
    """Test suite for writing whole datasets."""

    def test_seed_determinism(self, tmp_path, small_config):
        first = synth_scene(small_config.dataset, small_config.features, tmp_path / "a")
        second = synth_scene(small_config.dataset, small_config.features, tmp_path / "b")
        assert first == second
        for split, clip_ids in first.items():
            for clip_id in clip_ids:
                for sub, ext in (("foa", "wav"), ("metadata", "csv")):
                    a = (tmp_path / "a" / sub / split / f"{clip_id}.{ext}").read_bytes()
                    b = (tmp_path / "b" / sub / split / f"{clip_id}.{ext}").read_bytes()
                    assert a == b

    def test_layout_and_manifest(self, tmp_path, small_config):
        splits = synth_scene(small_config.dataset, small_config.features, tmp_path)
        assert splits == {"train": ["train_0000", "train_0001"], "test": ["test_0000"]}
        assert (tmp_path / "manifest.yaml").exists()
        assert (tmp_path / "foa" / "train" / "train_0000.wav").exists()
        assert (tmp_path / "metadata" / "test" / "test_0000.csv").exists()


class TestSegmentation:
    """Test suite for fixed 4 s segmentation."""

    def test_counts(self):
        assert n_segments(60 * 24000, 96000) == 15
        assert n_segments(5 * 24000, 96000) == 2
        assert n_segments(0, 96000) == 1

    def test_padding_and_local_frames(self, rng):
        rows = [LabelRow(frame=f, class_index=1, track=0, azimuth=0, elevation=0) for f in range(35, 50)]
        clip = FoaClip("c", rng.standard_normal((4, 5 * 24000)), 24000, rows)
        segments = segment_clips(clip, 4.0)
        assert len(segments) == 2
        assert all(s.audio.shape == (4, 96000) for s in segments)
        assert np.all(segments[1].audio[:, 24000:] == 0)
        assert [r.frame for r in segments[0].rows] == list(range(35, 40))
        assert [r.frame for r in segments[1].rows] == list(range(0, 10))
        assert segments[1].segment == 1


class TestSpecAugment:
    """Test suite for time/frequency masking."""

    def test_no_masks_is_identity(self, rng):
        sed, doa = rng.standard_normal((4, 40, 64)), rng.standard_normal((7, 40, 64))
        config = AugmentConfig(spec_augment=True, n_time_masks=0, n_freq_masks=0)
        out_sed, out_doa = spec_augment(sed, doa, rng, config)
        np.testing.assert_array_equal(out_sed, sed)
        np.testing.assert_array_equal(out_doa, doa)

    def test_full_mask(self, rng):
        stack = rng.standard_normal((4, 10, 8))
        out = apply_masks(stack, MaskPlan(time=[(0, 10)]))
        assert np.all(out == 0)

    def test_unmasked_cells_untouched_and_shared(self, rng):
        sed, doa = rng.standard_normal((4, 160, 256)), rng.standard_normal((7, 160, 256))
        out_sed, out_doa = spec_augment(sed, doa, rng)
        masked_sed = np.all(out_sed == 0, axis=0)
        masked_doa = np.all(out_doa == 0, axis=0)
        np.testing.assert_array_equal(masked_sed, masked_doa)
        np.testing.assert_array_equal(out_sed[:, ~masked_sed], sed[:, ~masked_sed])

    def test_masked_fraction_bound(self, rng):
        bound = (2 * 8 * 256 + 2 * 32 * 160) / (160 * 256)
        for _ in range(50):
            plan = sample_masks(160, 256, rng)
            assert plan.covered(160, 256).mean() <= bound


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

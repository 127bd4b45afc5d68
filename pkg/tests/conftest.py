"""Pytest configuration and shared fixtures."""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.data.labels import LabelRow
from seld_einv2.progress_reporter import ProgressReporter
from seld_einv2.run_config import RunConfig, override_run_config


@pytest.fixture
def rng():
    """Seeded generator so random-instance tests are reproducible."""
    return np.random.default_rng(1234)


@pytest.fixture
def quiet_progress():
    return ProgressReporter(quiet=True)


@pytest.fixture
def small_config(tmp_path):
    """
    A run config small enough for CPU tests: 4 s clips, 64 mel bands and
    the tiny network (widths / 8, D = 64, two heads).
    """
    return override_run_config(RunConfig(), {
        "dataset.root": str(tmp_path / "data"),
        "dataset.splits": {"train": 2, "test": 1},
        "dataset.clip_length": 4.0,
        "dataset.event_rate": 1.0,
        "dataset.event_duration": [0.5, 1.5],
        "dataset.seed": 3,
        "features.n_mels": 64,
        "model.width_divisor": 8,
        "model.mhsa": {"layers": 1, "heads": 2, "model_dim": 64},
        "train.epoch_scale": 0.02,
        "train.batch_size": 2,
        "train.run_dir": str(tmp_path / "run"),
    })


@pytest.fixture
def synth_dataset(small_config, quiet_progress):
    """Synthesized and featurized dataset for small_config; returns its root."""
    from seld_einv2.data.dataset import SeldDataset
    from seld_einv2.data.scene import synth_scene

    root = Path(small_config.dataset.root)
    synth_scene(small_config.dataset, small_config.features, root, quiet_progress)
    SeldDataset(root, small_config).featurize(quiet_progress)
    return root


@pytest.fixture
def reference_rows():
    """Two classes over two 1 s segments, overlapping on frames 5 to 14."""
    rows = []
    for frame in range(0, 20):
        rows.append(LabelRow(frame=frame, class_index=1, track=0, azimuth=30, elevation=10))
    for frame in range(5, 15):
        rows.append(LabelRow(frame=frame, class_index=4, track=1, azimuth=-90, elevation=0))
    return rows

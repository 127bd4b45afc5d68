#!/usr/bin/env python3
"""
Tests for training runs: run-directory contents, determinism, resume and
checkpoint evaluation. These train the tiny network on small synthetic datasets.
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.data.dataset import SeldDataset
from seld_einv2.errors import CheckpointError
from seld_einv2.run_config import load_run_config, override_run_config
from seld_einv2.trainer.loop import (
    BEST_NAME,
    CONFIG_NAME,
    HISTORY_COLUMNS,
    HISTORY_NAME,
    LAST_NAME,
    SUMMARY_NAME,
    Trainer,
    evaluate_checkpoint,
    format_history,
    prefetch,
    train_loop,
)


class TestHelpers:
    """Test suite for history formatting and batch prefetching."""

    def test_format_history(self):
        row = {"epoch": 0, "loss": 1.5, "ER": 1.0, "F": 0.0, "LE": 180.0, "LR": 0.0, "SELD": 1.0}
        text = format_history([row])
        assert text.splitlines()[0] == ",".join(HISTORY_COLUMNS)
        assert text.splitlines()[1] == "0,1.500000,1.000000,0.000000,180.000000,0.000000,1.000000"

    def test_prefetch_keeps_order(self):
        assert list(prefetch(iter(range(20)), depth=2)) == list(range(20))

    def test_prefetch_reraises(self):
        def broken():
            yield 1
            raise RuntimeError("loader failed")

        with pytest.raises(RuntimeError, match="loader failed"):
            list(prefetch(broken(), depth=1))


@pytest.mark.slow
class TestTrainLoop:
    """Test suite for train_loop on the tiny configuration."""

    def test_run_directory(self, synth_dataset, small_config, quiet_progress):
        results = train_loop(small_config, progress=quiet_progress)
        assert len(results) == 1
        run_dir = Path(small_config.train.run_dir)
        for name in (CONFIG_NAME, HISTORY_NAME, BEST_NAME, LAST_NAME):
            assert (run_dir / name).exists()
        history = (run_dir / HISTORY_NAME).read_text().splitlines()
        assert len(history) == 1 + small_config.train.total_epochs
        assert set(results[0].best) >= {"epoch", "loss", "ER", "F", "LE", "LR"}
        assert load_run_config(str(run_dir / CONFIG_NAME)).model == small_config.model

    def test_same_seed_same_history(self, synth_dataset, small_config, quiet_progress, tmp_path):
        for name in ("a", "b"):
            config = override_run_config(small_config, {"train.run_dir": str(tmp_path / name)})
            train_loop(config, progress=quiet_progress)
        assert (tmp_path / "a" / HISTORY_NAME).read_bytes() == (tmp_path / "b" / HISTORY_NAME).read_bytes()

    def test_resume_continues_the_same_run(self, synth_dataset, small_config, quiet_progress, tmp_path):
        straight = override_run_config(small_config, {"train.run_dir": str(tmp_path / "straight")})
        train_loop(straight, progress=quiet_progress)

        stopped = override_run_config(small_config, {"train.run_dir": str(tmp_path / "resumed"), "train.max_steps": 1})
        train_loop(stopped, progress=quiet_progress)
        resumed = override_run_config(small_config, {"train.run_dir": str(tmp_path / "resumed")})
        train_loop(resumed, progress=quiet_progress, resume=True)

        a = (tmp_path / "straight" / HISTORY_NAME).read_bytes()
        b = (tmp_path / "resumed" / HISTORY_NAME).read_bytes()
        assert a == b

    def test_evaluate_best_checkpoint(self, synth_dataset, small_config, quiet_progress):
        result = train_loop(small_config, progress=quiet_progress)[0]
        ckpt = Path(small_config.train.run_dir) / BEST_NAME
        scores = evaluate_checkpoint(ckpt, small_config)
        assert evaluate_checkpoint(ckpt, small_config) == scores
        assert scores.er == pytest.approx(result.best["ER"], abs=1e-6)

    def test_checkpoint_config_mismatch(self, synth_dataset, small_config, quiet_progress):
        train_loop(small_config, progress=quiet_progress)
        other = override_run_config(small_config, {"model.ps_mode": "hard"})
        with pytest.raises(CheckpointError, match="model config"):
            evaluate_checkpoint(Path(small_config.train.run_dir) / LAST_NAME, other)

    def test_trials_summary(self, synth_dataset, small_config, quiet_progress):
        config = override_run_config(small_config, {"train.n_trials": 2, "train.epoch_scale": 0.01})
        results = train_loop(config, progress=quiet_progress)
        root = Path(config.train.run_dir)
        assert [r.run_dir for r in results] == [root / "trial_0", root / "trial_1"]
        summary = (root / SUMMARY_NAME).read_text()
        assert summary.startswith("trials 2")
        assert "best ER" in summary and "last SELD" in summary

    def test_oracle_sed_localisation_only(self, synth_dataset, small_config, quiet_progress):
        dataset = SeldDataset(synth_dataset, small_config)
        trainer = Trainer(small_config, dataset, small_config.train.run_dir, progress=quiet_progress)
        scores = trainer.evaluate(oracle="sed")
        assert scores.lr == pytest.approx(1.0) or "lr_undefined" in scores.flags


@pytest.mark.slow
class TestOverfit:
    """Test suite for memorising a handful of clips with the tiny network."""

    def test_loss_decreases(self, small_config, quiet_progress, tmp_path):
        from seld_einv2.data.scene import synth_scene

        config = override_run_config(small_config, {"dataset.splits": {"train": 8, "test": 1}})
        root = Path(config.dataset.root)
        synth_scene(config.dataset, config.features, root, quiet_progress)
        dataset = SeldDataset(root, config)
        dataset.featurize(quiet_progress)
        trainer = Trainer(config, dataset, tmp_path / "overfit", progress=quiet_progress)
        batch = next(dataset.iter_batches(dataset.segments("train"), 8))

        losses = [trainer.train_step(batch, config.train.lr_phase1) for _ in range(200)]
        assert all(np.isfinite(losses))
        assert np.median(losses[-20:]) < 0.25 * np.median(losses[:20])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

#!/usr/bin/env python3
"""Tests for the ablation sweep: grid expansion, sweep files and the report."""

import os
import sys
from pathlib import Path
from unittest.mock import patch

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.errors import ConfigError
from seld_einv2.run_config import save_run_config
from seld_einv2.trainer.loop import TrialResult
from seld_einv2.trainer.sweep import (
    REPORT_NAME,
    SweepConfig,
    cell_name,
    format_sweep_report,
    grid_cells,
    load_sweep_config,
    run_sweep,
)


def fake_result(er, f):
    best = {"epoch": 0, "loss": 0.1, "ER": er, "F": f, "LE": 10.0, "LR": 0.9, "SELD": er}
    return TrialResult(run_dir=Path("unused"), history=[best], best=best, last=best)


class TestGrid:
    """Test suite for grid expansion."""

    def test_product(self):
        sweep = SweepConfig(grid={"model.ps_mode": ["none", "hard", "soft"],
                                  "model.output_format": ["seldnet", "trackwise"]})
        cells = grid_cells(sweep)
        assert len(cells) == 6
        assert cells[0] == {"model.ps_mode": "none", "model.output_format": "seldnet"}
        assert cells[-1] == {"model.ps_mode": "soft", "model.output_format": "trackwise"}

    def test_cell_name(self):
        assert cell_name({"model.ps_mode": "soft", "loss.method": "cpit"}) == "soft_cpit"

    def test_empty_grid(self):
        cells = grid_cells(SweepConfig())
        assert cells == [{}]
        assert cell_name(cells[0]) == "base"


class TestSweepFile:
    """Test suite for load_sweep_config."""

    def test_preset(self):
        sweep = load_sweep_config()
        assert sweep.base == "tiny"
        assert sweep.trials == 2
        assert len(grid_cells(sweep)) == 6

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError, match="Sweep file not found"):
            load_sweep_config("no/such/sweep.yaml")

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text("base: tiny\nrepeats: 3\n")
        with pytest.raises(ConfigError, match="Invalid sweep key repeats"):
            load_sweep_config(str(path))

    def test_grid_key_needs_section(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text("grid:\n  ps_mode: [none]\n")
        with pytest.raises(ConfigError, match="section.field"):
            load_sweep_config(str(path))

    def test_grid_key_needs_values(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text("grid:\n  model.ps_mode: []\n")
        with pytest.raises(ConfigError, match="no values"):
            load_sweep_config(str(path))


class TestReport:
    """Test suite for the markdown report."""

    def test_format(self):
        rows = [({"model.ps_mode": "none"}, [fake_result(0.4, 0.6), fake_result(0.2, 0.8)]),
                ({"model.ps_mode": "soft"}, [fake_result(0.1, 0.9), fake_result(0.1, 0.9)])]
        lines = format_sweep_report(rows, trials=2).splitlines()
        assert lines[0] == "# Ablation sweep (2 trials per cell)"
        assert lines[2] == "| model.ps_mode | ER | F | LE | LR | SELD |"
        assert lines[4].startswith("| none | 0.300 ± 0.100 | 0.700 ± 0.100 |")
        assert lines[5].startswith("| soft | 0.100 ± 0.000 |")

    def test_single_trial_heading(self):
        text = format_sweep_report([({}, [fake_result(0.5, 0.5)])], trials=1)
        assert text.startswith("# Ablation sweep (1 trial per cell)")


class TestRunSweep:
    """Test suite for run_sweep with training replaced by a stub."""

    def setup_method(self):
        self.trained = []

    def fake_train_loop(self, config, dataset, progress):
        self.trained.append(config)
        return [fake_result(0.5, 0.5) for _ in range(config.train.n_trials)]

    def write_base(self, small_config, tmp_path):
        return str(save_run_config(small_config, tmp_path / "base.yaml"))

    def test_trains_every_cell(self, small_config, quiet_progress, tmp_path):
        sweep = SweepConfig(base=self.write_base(small_config, tmp_path), trials=2,
                            out_dir=str(tmp_path / "sweep"),
                            grid={"model.ps_mode": ["none", "soft"], "loss.method": ["tpit"]})
        with patch('seld_einv2.trainer.sweep.SeldDataset'), \
                patch('seld_einv2.trainer.sweep.train_loop', side_effect=self.fake_train_loop):
            report = run_sweep(sweep, quiet_progress)
        assert report == tmp_path / "sweep" / REPORT_NAME
        assert [c.model.ps_mode for c in self.trained] == ["none", "soft"]
        assert [Path(c.train.run_dir).name for c in self.trained] == ["none_tpit", "soft_tpit"]
        assert all(c.train.n_trials == 2 for c in self.trained)
        assert "| soft | tpit |" in report.read_text()

    def test_rejects_feature_cells(self, small_config, quiet_progress, tmp_path):
        sweep = SweepConfig(base=self.write_base(small_config, tmp_path), out_dir=str(tmp_path / "sweep"),
                            grid={"features.n_mels": [32]})
        with patch('seld_einv2.trainer.sweep.SeldDataset'), \
                patch('seld_einv2.trainer.sweep.train_loop', side_effect=self.fake_train_loop):
            with pytest.raises(ConfigError, match="changes the dataset or features"):
                run_sweep(sweep, quiet_progress)
        assert self.trained == []


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

"""
Ablation sweep over parameter-sharing modes and output formats.

A sweep file names a base run config, the number of trials per cell and a
grid of dotted config keys:

    base: tiny
    trials: 2
    out_dir: runs/sweep
    grid:
      model.ps_mode: [none, hard, soft]
      model.output_format: [seldnet, trackwise]

Every grid cell is trained and scored like ``seld train`` and the cells are
collected into ``sweep_report.md``.
"""

from __future__ import annotations

import itertools
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from seld_einv2.data.dataset import SeldDataset
from seld_einv2.errors import ConfigError
from seld_einv2.metrics import METRIC_NAMES, summarize_trials
from seld_einv2.progress_reporter import ProgressReporter
from seld_einv2.run_config import CONFIG_DIR, dump_run_config, load_run_config, override_run_config
from seld_einv2.trainer.loop import TrialResult, train_loop

logger = logging.getLogger(__name__)

REPORT_NAME = "sweep_report.md"


class SweepConfig(BaseModel):
    """Schema for a sweep file"""
    model_config = ConfigDict(extra="forbid")

    base: str = Field(default="tiny", description="Run config path or preset name")
    trials: int = Field(default=1, ge=1, description="Trials per grid cell")
    out_dir: str = Field(default="runs/sweep", description="Root of the per-cell run directories")
    grid: Dict[str, List[Any]] = Field(default_factory=dict, description="Dotted config key -> values")

    @field_validator("grid")
    @classmethod
    def validate_grid(cls, v):
        """Validate grid keys"""
        for key, values in v.items():
            if "." not in key:
                raise ValueError(f"Grid key must be section.field: {key}")
            if not values:
                raise ValueError(f"Grid key {key} has no values")
        return v


def load_sweep_config(path: Optional[str] = None) -> SweepConfig:
    """Read a sweep file; a bare name selects a shipped preset."""
    path = path or "sweep"
    file_path = Path(path)
    if not file_path.exists() and (CONFIG_DIR / f"{path}.yaml").exists():
        file_path = CONFIG_DIR / f"{path}.yaml"
    if not file_path.exists():
        raise FileNotFoundError(f"Sweep file not found: {path}")
    try:
        return SweepConfig(**(yaml.safe_load(file_path.read_text(encoding="utf-8")) or {}))
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {file_path}: {e}")
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"Invalid sweep key {'.'.join(str(p) for p in first['loc'])}: {first['msg']}")


def grid_cells(sweep: SweepConfig) -> List[Dict[str, Any]]:
    keys = list(sweep.grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(sweep.grid[k] for k in keys))]


def cell_name(cell: Dict[str, Any]) -> str:
    return "_".join(str(v) for v in cell.values()) or "base"


def format_sweep_report(rows: List[tuple[Dict[str, Any], List[TrialResult]]], trials: int) -> str:
    """Markdown table: one row per cell, mean +/- std of the best-epoch scores."""
    keys = list(rows[0][0]) if rows else []
    header = keys + [name for name in METRIC_NAMES]
    lines = [
        f"# Ablation sweep ({trials} trial{'s' if trials != 1 else ''} per cell)",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    for cell, results in rows:
        summary = summarize_trials([r.best for r in results])
        cells = [str(cell[k]) for k in keys]
        cells += [f"{summary[name][0]:.3f} ± {summary[name][1]:.3f}" for name in METRIC_NAMES]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def run_sweep(sweep: SweepConfig, progress: Optional[ProgressReporter] = None) -> Path:
    """
    Train every grid cell and write the report

    Args:
        sweep: validated sweep file
        progress: optional ProgressReporter

    Returns:
        Path of sweep_report.md
    """
    base = load_run_config(sweep.base)
    out_dir = Path(sweep.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = SeldDataset(base.dataset.root, base)
    if not dataset.stats_path.exists():
        dataset.featurize(progress)

    rows = []
    for cell in grid_cells(sweep):
        name = cell_name(cell)
        updates = {**cell, "train.n_trials": sweep.trials, "train.run_dir": str(out_dir / name)}
        config = override_run_config(base, updates)
        if config.features != base.features or config.dataset != base.dataset:
            raise ConfigError(f"Sweep cell {name} changes the dataset or features; sweep those separately")
        if progress is not None:
            progress.run_started(f"Sweep cell {name}", ", ".join(f"{k}={v}" for k, v in cell.items()))
        logger.debug("Sweep cell %s:\n%s", name, dump_run_config(config))
        dataset.config = config
        rows.append((cell, train_loop(config, dataset, progress)))

    report = out_dir / REPORT_NAME
    report.write_text(format_sweep_report(rows, sweep.trials), encoding="utf-8")
    return report

#!/usr/bin/env python3
"""
Training and evaluation runs.

A run directory holds:

    config.used          the frozen run config
    history.csv          epoch, loss, ER, F, LE, LR, SELD per evaluated epoch
    ckpt_last            parameters, optimizer moments and run state
    ckpt_best            parameters at the lowest ER seen
    trials_summary.txt   mean +/- std over trials (multi-trial runs)

History files contain no timings, so two single-worker runs with the same
seed write identical bytes.
"""

from __future__ import annotations

import logging
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np

from seld_einv2.data.dataset import Batch, SegmentRef, SeldDataset
from seld_einv2.diffcore.checkpoint import load_checkpoint, save_checkpoint
from seld_einv2.errors import CheckpointError, ConfigError
from seld_einv2.losses import compute_loss
from seld_einv2.metrics import METRIC_NAMES, SeldMetrics, SeldScores, summarize_trials
from seld_einv2.model.decode import decode_with_oracle
from seld_einv2.model.einv2 import EINV2, build_model, predict_batch
from seld_einv2.progress_reporter import ProgressReporter, get_progress_reporter
from seld_einv2.run_config import RunConfig, config_hash, save_run_config
from seld_einv2.trainer.optim import STATE_PREFIX, AdamW, lr_schedule

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "loss") + METRIC_NAMES
CONFIG_NAME = "config.used"
HISTORY_NAME = "history.csv"
LAST_NAME = "ckpt_last"
BEST_NAME = "ckpt_best"
SUMMARY_NAME = "trials_summary.txt"


@dataclass
class RunState:
    """Everything needed to continue a run step-for-step."""
    epoch: int = 0
    step: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    best: Optional[Dict[str, float]] = None
    history: List[Dict[str, float]] = field(default_factory=list)
    skips: int = 0

    def to_meta(self) -> Dict[str, Any]:
        return {"epoch": self.epoch, "step": self.step, "rng": self.rng_state, "best": self.best,
                "history": self.history, "skips": self.skips}

    @classmethod
    def from_meta(cls, meta: Dict[str, Any]) -> "RunState":
        return cls(epoch=int(meta.get("epoch", 0)), step=int(meta.get("step", 0)), rng_state=meta.get("rng"),
                   best=meta.get("best"), history=list(meta.get("history", [])), skips=int(meta.get("skips", 0)))


@dataclass
class TrialResult:
    run_dir: Path
    history: List[Dict[str, float]]
    best: Dict[str, float]
    last: Dict[str, float]


def format_history(history: Sequence[Dict[str, float]]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        values = [str(int(row["epoch"]))] + [f"{row[c]:.6f}" for c in HISTORY_COLUMNS[1:]]
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def write_history(path: Path, history: Sequence[Dict[str, float]]) -> Path:
    path.write_text(format_history(history), encoding="utf-8")
    return path


def prefetch(batches: Iterator[Batch], depth: int) -> Iterator[Batch]:
    """Build batches on a producer thread feeding a bounded queue."""
    done = object()
    q: "queue.Queue[Any]" = queue.Queue(maxsize=max(1, depth))

    def produce():
        try:
            for batch in batches:
                q.put(batch)
        except BaseException as e:  # re-raised on the consumer side
            q.put(e)
        q.put(done)

    thread = threading.Thread(target=produce, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is done:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    thread.join()


def model_entries(entries: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {k: v for k, v in entries.items() if not k.startswith(STATE_PREFIX)}


class Trainer:
    """One training trial of an EINV2 model on a featurized dataset."""

    def __init__(self, config: RunConfig, dataset: SeldDataset, run_dir: str | Path, seed: Optional[int] = None,
                 progress: Optional[ProgressReporter] = None):
        self.config = config
        self.dataset = dataset
        self.run_dir = Path(run_dir)
        self.seed = config.train.seed if seed is None else seed
        self.progress = progress or get_progress_reporter()
        self.model: EINV2 = build_model(config.model, self.seed)
        self.optimizer = AdamW(self.model.named_parameters(), config.train)
        self.rng = np.random.default_rng(self.seed)
        self.state = RunState()
        self.dtype = np.dtype(config.model.dtype)
        self.hash = config_hash(config.model)

        self.train_refs = dataset.segments("train")
        if not self.train_refs:
            raise ConfigError(f"Dataset {dataset.root} has no training segments")
        self.eval_split = config.eval.split

    # -- steps ------------------------------------------------------------

    def train_step(self, batch: Batch, lr: float) -> float:
        """Forward, loss, backward and one optimizer step; returns the batch loss."""
        self.model.train()
        self.optimizer.zero_grad()
        sed, doa = self.model(batch.sed, batch.doa)
        loss = compute_loss(sed, doa, batch.labels, self.config.loss, self.config.model.output_format)
        value = loss.item()
        if not math.isfinite(value):
            self.optimizer.skip("non-finite loss")
            return value
        loss.backward()
        if self.optimizer.step(lr):
            self.state.step += 1
        self.state.skips = self.optimizer.total_skips
        return value

    def evaluate(self, split: Optional[str] = None, oracle: Optional[str] = None) -> SeldScores:
        """Score the model on every segment of a split (eval-mode forward)."""
        split = split or self.eval_split
        refs = self.dataset.segments(split)
        if not refs:
            raise ConfigError(f"Dataset split '{split}' has no segments")
        return evaluate_model(self.model, self.dataset, refs, self.config, oracle)

    # -- run --------------------------------------------------------------

    def _batches(self) -> Iterator[Batch]:
        t = self.config.train
        batches = self.dataset.iter_batches(self.train_refs, t.batch_size, self.rng, shuffle=True,
                                            augment=True, dtype=self.dtype)
        if t.num_workers > 0:
            return prefetch(batches, 2 * t.num_workers)
        return batches

    def _reached_max_steps(self) -> bool:
        limit = self.config.train.max_steps
        return limit is not None and self.state.step >= limit

    def fit(self) -> TrialResult:
        """Train from the current state to the end of the schedule."""
        t = self.config.train
        self.run_dir.mkdir(parents=True, exist_ok=True)
        save_run_config(self.config, self.run_dir / CONFIG_NAME)
        total = t.total_epochs
        self.progress.total_epochs = total
        last: Optional[SeldScores] = None

        for epoch in range(self.state.epoch, total):
            lr = lr_schedule(epoch, t)
            self.progress.epoch_started(epoch, lr)
            losses = []
            for batch in self._batches():
                losses.append(self.train_step(batch, lr))
                if self._reached_max_steps():
                    break
            finite = [v for v in losses if math.isfinite(v)]
            epoch_loss = float(np.mean(finite)) if finite else float("nan")
            stop = self._reached_max_steps()

            if (epoch + 1) % t.eval_every == 0 or epoch + 1 == total or stop:
                last = self.evaluate()
                row = {"epoch": epoch, "loss": epoch_loss, **last.as_dict()}
                self.state.history.append(row)
                write_history(self.run_dir / HISTORY_NAME, self.state.history)
                if self.state.best is None or last.er < self.state.best["ER"]:
                    self.state.best = row
                    save_checkpoint(self.run_dir / BEST_NAME, self.model.state_dict(), self.hash, {"best": row})
                self.progress.epoch_completed(epoch, {"loss": epoch_loss, **last.as_dict()})
            else:
                self.progress.epoch_completed(epoch, {"loss": epoch_loss})

            self.state.epoch = epoch + 1
            self.save_last()
            if stop:
                logger.info("Reached max_steps=%d at epoch %d", t.max_steps, epoch)
                break

        if last is None:
            last = self.evaluate()
        self.progress.final_summary(self.state.best)
        return TrialResult(self.run_dir, list(self.state.history), dict(self.state.best or {}), last.as_dict())

    # -- checkpoints ------------------------------------------------------

    def save_last(self) -> Path:
        self.state.rng_state = self.rng.bit_generator.state
        entries = dict(self.model.state_dict())
        entries.update(self.optimizer.state_entries())
        meta = self.state.to_meta()
        meta["optim_step"] = self.optimizer.state.step
        return save_checkpoint(self.run_dir / LAST_NAME, entries, self.hash, meta)

    def resume(self, path: Optional[str | Path] = None) -> "Trainer":
        """Restore model, optimizer and run state from ckpt_last."""
        path = Path(path) if path is not None else self.run_dir / LAST_NAME
        entries, stored_hash, meta = load_checkpoint(path)
        check_hash(stored_hash, self.hash, path)
        self.model.load_state_dict(model_entries(entries))
        self.optimizer.load_state_entries(entries, meta.get("optim_step", 0))
        self.state = RunState.from_meta(meta)
        self.optimizer.total_skips = self.state.skips
        if self.state.rng_state is not None:
            self.rng.bit_generator.state = self.state.rng_state
        logger.info("Resumed %s at epoch %d, step %d", path, self.state.epoch, self.state.step)
        return self


def check_hash(stored: str, expected: str, path: Path) -> None:
    if stored != expected:
        raise CheckpointError(
            f"Checkpoint {path} was trained with model config {stored[:12]}, current config is {expected[:12]}"
        )


def evaluate_model(model: EINV2, dataset: SeldDataset, refs: Sequence[SegmentRef], config: RunConfig,
                   oracle: Optional[str] = None) -> SeldScores:
    """Decode and score each segment in its own frame range."""
    e = config.eval
    oracle = oracle or e.oracle
    model.eval()
    metrics = SeldMetrics(e.doa_threshold, e.segment_seconds, config.features.label_hop)
    dtype = np.dtype(config.model.dtype)
    for batch in dataset.iter_batches(refs, config.train.batch_size, dtype=dtype):
        for pred, rows in zip(predict_batch(model, batch.sed, batch.doa), batch.rows):
            decoded = decode_with_oracle(pred, e.threshold, 0, oracle, rows)
            metrics.update(decoded, rows)
    return metrics.compute()


def evaluate_checkpoint(checkpoint: str | Path, config: RunConfig, split: Optional[str] = None,
                        dataset: Optional[SeldDataset] = None, oracle: Optional[str] = None) -> SeldScores:
    """
    Score a saved model on a dataset split

    Args:
        checkpoint: ckpt_best / ckpt_last path
        config: run config whose model section must match the checkpoint
        split: defaults to config.eval.split

    Returns:
        SeldScores
    """
    path = Path(checkpoint)
    entries, stored_hash, _ = load_checkpoint(path)
    check_hash(stored_hash, config_hash(config.model), path)
    model = EINV2(config.model)
    model.load_state_dict(model_entries(entries))
    dataset = dataset or SeldDataset(config.dataset.root, config)
    refs = dataset.segments(split or config.eval.split)
    if not refs:
        raise ConfigError(f"Dataset split '{split or config.eval.split}' has no segments")
    return evaluate_model(model, dataset, refs, config, oracle)


def format_trials_summary(results: Sequence[TrialResult]) -> str:
    lines = [f"trials {len(results)}"]
    for label, key in (("best", "best"), ("last", "last")):
        summary = summarize_trials([getattr(r, key) for r in results])
        for name, (mean, std) in summary.items():
            lines.append(f"{label} {name} {mean:.6f} +/- {std:.6f}")
    return "\n".join(lines) + "\n"


def train_loop(config: RunConfig, dataset: Optional[SeldDataset] = None, progress: Optional[ProgressReporter] = None,
               resume: bool = False) -> List[TrialResult]:
    """
    Train n_trials models with seeds seed, seed + 1, ...

    A single trial writes straight into run_dir; several trials write into
    run_dir/trial_<k> and a trials_summary.txt next to them.
    """
    t = config.train
    dataset = dataset or SeldDataset(config.dataset.root, config)
    if not dataset.stats_path.exists():
        dataset.featurize(progress)
    root = Path(t.run_dir)
    results = []
    for k in range(t.n_trials):
        run_dir = root if t.n_trials == 1 else root / f"trial_{k}"
        if progress is not None:
            progress.run_started(f"Training trial {k + 1}/{t.n_trials}", f"run dir {run_dir}")
        trainer = Trainer(config, dataset, run_dir, seed=t.seed + k, progress=progress)
        if resume and (run_dir / LAST_NAME).exists():
            trainer.resume()
        results.append(trainer.fit())
    if t.n_trials > 1:
        (root / SUMMARY_NAME).write_text(format_trials_summary(results), encoding="utf-8")
    return results

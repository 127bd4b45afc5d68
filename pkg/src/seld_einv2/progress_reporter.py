"""
Progress Reporter for seld_einv2

Provides real-time status updates during training and evaluation runs.
Output goes to stdout only; nothing here is written into run files.
"""

from datetime import datetime
from typing import Dict, Optional
import sys


def _mmss(seconds: float) -> str:
    return f"{int(seconds // 60):02d}:{int(seconds % 60):02d}"


class ProgressReporter:
    """Reports progress of a training run with timestamps and epoch counts."""

    def __init__(self, total_epochs: int = 100, quiet: bool = False):
        self.total_epochs = total_epochs
        self.completed_epochs = 0
        self.current_epoch: Optional[int] = None
        self.start_time = datetime.now()
        self.epoch_start_time = None
        self.quiet = quiet

    def _print(self, *lines: str):
        if self.quiet:
            return
        for line in lines:
            print(line)
        sys.stdout.flush()

    def run_started(self, title: str, detail: Optional[str] = None):
        """Report the start of a run (training trial, sweep cell, featurization)."""
        lines = [f"\n{'='*70}", f"🚀 STARTING: {title}"]
        if detail:
            lines.append(f"   {detail}")
        lines.append(f"{'='*70}")
        self._print(*lines)

    def epoch_started(self, epoch: int, lr: Optional[float] = None):
        """Report when an epoch starts."""
        self.epoch_start_time = datetime.now()
        self.current_epoch = epoch
        elapsed = (datetime.now() - self.start_time).total_seconds()
        line = (f"⏱️  Elapsed: {_mmss(elapsed)} | Epoch {epoch + 1}/{self.total_epochs} "
                f"| Progress: {self.completed_epochs}/{self.total_epochs} epochs completed")
        if lr is not None:
            line += f" | lr {lr:g}"
        self._print(line)

    def epoch_completed(self, epoch: int, scores: Optional[Dict[str, float]] = None):
        """Report when an epoch completes, with its loss and scores."""
        self.completed_epochs += 1
        if self.epoch_start_time:
            duration = _mmss((datetime.now() - self.epoch_start_time).total_seconds())
        else:
            duration = "N/A"

        lines = [f"✅ COMPLETED: epoch {epoch + 1} in {duration}"]
        if scores:
            lines.append("   " + " | ".join(f"{k} {v:.4f}" for k, v in scores.items()))
        if self.completed_epochs > 0:
            elapsed_total = (datetime.now() - self.start_time).total_seconds()
            remaining = (self.total_epochs - self.completed_epochs) * elapsed_total / self.completed_epochs
            lines.append(f"   Estimated time remaining: ~{_mmss(remaining)}")
        self._print(*lines)

    def status_update(self, message: str):
        """Print a status update."""
        self._print(f"   📍 {message}")

    def final_summary(self, best: Optional[Dict[str, float]] = None):
        """Print final execution summary."""
        total_time = (datetime.now() - self.start_time).total_seconds()
        lines = [
            f"\n{'='*70}",
            "🎉 RUN COMPLETE!",
            f"   Total time: {_mmss(total_time)}",
            f"   Epochs completed: {self.completed_epochs}/{self.total_epochs}",
        ]
        if best:
            lines.append("   Best: " + " | ".join(f"{k} {v:.4f}" for k, v in best.items()))
        lines.append(f"{'='*70}\n")
        self._print(*lines)


# Global progress reporter instance
_progress_reporter = None


def get_progress_reporter() -> ProgressReporter:
    """Get or create the global progress reporter."""
    global _progress_reporter
    if _progress_reporter is None:
        _progress_reporter = ProgressReporter()
    return _progress_reporter


def reset_progress_reporter(total_epochs: int = 100, quiet: bool = False) -> ProgressReporter:
    """Reset the progress reporter for a new run."""
    global _progress_reporter
    _progress_reporter = ProgressReporter(total_epochs, quiet)
    return _progress_reporter

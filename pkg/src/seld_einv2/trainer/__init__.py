"""Optimisation loop, checkpointed runs and the ablation sweep."""

from seld_einv2.trainer.loop import RunState, Trainer, evaluate_checkpoint, train_loop
from seld_einv2.trainer.optim import AdamW, adamw_step, lr_schedule

__all__ = ["AdamW", "RunState", "Trainer", "adamw_step", "evaluate_checkpoint", "lr_schedule", "train_loop"]

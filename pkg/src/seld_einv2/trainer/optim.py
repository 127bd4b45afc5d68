"""AdamW with decoupled weight decay, global-norm clipping and the two-phase learning rate."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from seld_einv2.diffcore.nn import Parameter
from seld_einv2.errors import CheckpointError, TrainingDiverged
from seld_einv2.run_config import TrainConfig

logger = logging.getLogger(__name__)

STATE_PREFIX = "optim."


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr: float,
               weight_decay: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """
    One in-place AdamW update

    p <- p - lr * wd * p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps) with
    bias-corrected moments. Entries without a gradient are left alone.
    """
    beta1, beta2 = betas
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Phase-one rate before the 90 % boundary of the (scaled) run, phase-two rate after it."""
    return config.lr_phase1 if epoch < config.phase2_start else config.lr_phase2


class AdamW:
    """Optimizer over named parameters; skips steps with non-finite gradients."""

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], config: Optional[TrainConfig] = None):
        config = config or TrainConfig()
        self.params: Dict[str, Parameter] = dict(named_params)
        self.betas = (config.beta1, config.beta2)
        self.eps = config.adam_eps
        self.weight_decay = config.weight_decay
        self.grad_clip = config.grad_clip
        self.max_consecutive_skips = config.max_consecutive_skips
        self.state = AdamState()
        self.consecutive_skips = 0
        self.total_skips = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def skip(self, reason: str) -> None:
        """Record a skipped step; raise after too many in a row."""
        self.consecutive_skips += 1
        self.total_skips += 1
        logger.warning("Skipping optimizer step %d: %s (%d consecutive)",
                       self.state.step + 1, reason, self.consecutive_skips)
        if self.consecutive_skips >= self.max_consecutive_skips:
            raise TrainingDiverged(f"{self.consecutive_skips} consecutive steps skipped; last: {reason}")

    def step(self, lr: float) -> bool:
        """
        Apply one update from the parameters' .grad

        Returns:
            False when the step was skipped
        """
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skip("non-finite gradient")
            return False
        self.consecutive_skips = 0
        if self.grad_clip:
            norm = global_norm(grads.values())
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
                grads = {name: g * scale for name, g in grads.items()}
        adamw_step({name: p.data for name, p in self.params.items()}, grads, self.state, lr,
                   self.weight_decay, self.betas, self.eps)
        return True

    def state_entries(self) -> Dict[str, np.ndarray]:
        entries = {}
        for name, m in self.state.m.items():
            entries[f"{STATE_PREFIX}m.{name}"] = m
            entries[f"{STATE_PREFIX}v.{name}"] = self.state.v[name]
        return entries

    def load_state_entries(self, entries: Dict[str, np.ndarray], step: int) -> None:
        state = AdamState(step=int(step))
        for key, value in entries.items():
            if not key.startswith(STATE_PREFIX):
                continue
            kind, _, name = key[len(STATE_PREFIX):].partition(".")
            if name not in self.params:
                raise CheckpointError(f"Optimizer state for unknown parameter {name}")
            target = state.m if kind == "m" else state.v
            target[name] = np.array(value, dtype=self.params[name].dtype)
        self.state = state

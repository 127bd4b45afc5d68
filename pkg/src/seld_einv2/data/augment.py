"""
SpecAugment-style masking of feature stacks.

Masks are drawn once per example and applied to both branch inputs, so the
SED and DoA branches see the same hidden time/frequency regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from seld_einv2.run_config import AugmentConfig


@dataclass
class MaskPlan:
    """(start, width) bands along time and mel axes."""
    time: List[Tuple[int, int]] = field(default_factory=list)
    freq: List[Tuple[int, int]] = field(default_factory=list)

    def covered(self, n_frames: int, n_mels: int) -> np.ndarray:
        """Boolean [T, M] map of masked cells."""
        mask = np.zeros((n_frames, n_mels), dtype=bool)
        for start, width in self.time:
            mask[start:start + width, :] = True
        for start, width in self.freq:
            mask[:, start:start + width] = True
        return mask


def sample_masks(n_frames: int, n_mels: int, rng: np.random.Generator, n_time_masks: int = 2,
                 n_freq_masks: int = 2, max_time_width: int = 8, max_freq_width: int = 32) -> MaskPlan:
    """Widths uniform in [0, max], starts uniform over the valid range."""
    plan = MaskPlan()
    for _ in range(n_time_masks):
        width = int(rng.integers(0, min(max_time_width, n_frames) + 1))
        plan.time.append((int(rng.integers(0, n_frames - width + 1)), width))
    for _ in range(n_freq_masks):
        width = int(rng.integers(0, min(max_freq_width, n_mels) + 1))
        plan.freq.append((int(rng.integers(0, n_mels - width + 1)), width))
    return plan


def apply_masks(stack: np.ndarray, plan: MaskPlan) -> np.ndarray:
    """Zero the planned bands of a [..., C, T, M] stack; other cells are untouched."""
    out = stack.copy()
    mask = plan.covered(stack.shape[-2], stack.shape[-1])
    out[..., mask] = 0.0
    return out


def spec_augment(sed: np.ndarray, doa: np.ndarray, rng: np.random.Generator,
                 config: Optional[AugmentConfig] = None) -> tuple[np.ndarray, np.ndarray]:
    """Mask standardised branch inputs of one example with a shared plan."""
    config = config or AugmentConfig(spec_augment=True)
    plan = sample_masks(sed.shape[-2], sed.shape[-1], rng, config.n_time_masks, config.n_freq_masks,
                        config.max_time_width, config.max_freq_width)
    if not plan.time and not plan.freq:
        return sed, doa
    return apply_masks(sed, plan), apply_masks(doa, plan)

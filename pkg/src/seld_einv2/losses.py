"""
Training losses.

Trackwise outputs are scored against label tracks under an assignment of
prediction tracks to label tracks chosen to minimise the loss: per frame
(tPIT), per event chunk (cPIT) or fixed to the identity. The chosen
assignment enters the graph as a constant 0/1 selection matrix, so the
gradient flows through the selected pairs only.

A frame loss is summed over (prediction track, label track) pairs in
prediction-track order. Relabelling the label tracks therefore reorders
nothing that is added, and the loss is bit-identical under any relabelling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import permutations
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from seld_einv2.data.labels import FrameLabels
from seld_einv2.diffcore import ops
from seld_einv2.diffcore.tensor import Tensor, as_tensor
from seld_einv2.errors import ConfigError, DimensionError
from seld_einv2.run_config import LossConfig

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
MAX_ENUMERATED_TRACKS = 6
METHODS = ("tpit", "cpit", "fixed")
TASKS = ("joint", "sed", "doa")


@dataclass
class Chunk:
    """Frames [start, end) sharing one set of active events."""
    start: int
    end: int
    permutation: Optional[tuple[int, ...]] = None

    @property
    def n_frames(self) -> int:
        return self.end - self.start


def _bce(prob, target) -> Tensor:
    p = ops.clamp(prob, PROB_EPS, 1.0 - PROB_EPS)
    target = np.asarray(target, dtype=p.dtype)
    return ops.neg(ops.add(ops.mul(ops.log(p), target), ops.mul(ops.log(1.0 - p), 1.0 - target)))


def sed_loss(pred_sed, target) -> Tensor:
    """Binary cross-entropy over K classes, mean-reduced; probabilities clamped to [1e-7, 1 - 1e-7]."""
    return ops.mean(_bce(as_tensor(pred_sed), target))


def doa_loss(pred_doa, target, active: bool = True) -> Tensor:
    """Mean squared error over the 3 components; zero for an inactive track."""
    pred_doa = as_tensor(pred_doa)
    diff = ops.sub(pred_doa, np.asarray(target, dtype=pred_doa.dtype))
    mse = ops.mean(ops.mul(diff, diff))
    return mse if active else ops.mul(mse, 0.0)


# ---------------------------------------------------------------------------
# Label tensors
# ---------------------------------------------------------------------------

def _as_batch(sed, doa, labels) -> tuple[Tensor, Tensor, List[FrameLabels]]:
    sed, doa = as_tensor(sed), as_tensor(doa)
    if isinstance(labels, FrameLabels):
        labels = [labels]
    if doa.ndim == 3:
        sed = ops.reshape(sed, (1,) + sed.shape)
        doa = ops.reshape(doa, (1,) + doa.shape)
    if len(labels) != sed.shape[0]:
        raise DimensionError(f"Got {len(labels)} label sequences for a batch of {sed.shape[0]}")
    for item in labels:
        if item.n_frames != sed.shape[1]:
            raise DimensionError(f"Labels cover {item.n_frames} frames, predictions {sed.shape[1]}")
    return sed, doa, list(labels)


def _track_targets(labels: Sequence[FrameLabels], n_classes: int, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sed = np.stack([item.sed_targets(n_classes) for item in labels]).astype(dtype)
    doa = np.stack([item.doa for item in labels]).astype(dtype)
    active = np.stack([item.active for item in labels]).astype(dtype)
    return sed, doa, active


def pairwise_costs(sed, doa, labels, beta: float = 1.0, task: str = "joint") -> Tensor:
    """
    Loss of every prediction track against every label track

    Args:
        sed: [B, T, M, K] probabilities (or unbatched [T, M, K])
        doa: [B, T, M, 3]
        labels: one FrameLabels per batch element
        beta: weight of the DoA term
        task: 'joint', 'sed' or 'doa'

    Returns:
        cost [B, T, M_pred, M_label]
    """
    if task not in TASKS:
        raise ConfigError(f"Unknown loss task: {task}")
    sed, doa, labels = _as_batch(sed, doa, labels)
    b, t, m, k = sed.shape
    if labels and labels[0].n_tracks != m:
        raise DimensionError(f"Labels have {labels[0].n_tracks} tracks, predictions {m}")
    y, g, active = _track_targets(labels, k, sed.dtype)

    terms = []
    if task in ("joint", "sed"):
        pred = ops.reshape(sed, (b, t, m, 1, k))
        terms.append(ops.mean(_bce(pred, y[:, :, None, :, :]), axis=4))
    if task in ("joint", "doa"):
        diff = ops.sub(ops.reshape(doa, (b, t, m, 1, 3)), g[:, :, None, :, :])
        mse = ops.mul(ops.mean(ops.mul(diff, diff), axis=4), active[:, :, None, :])
        terms.append(ops.mul(mse, float(beta)) if task == "joint" else mse)
    return terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])


# ---------------------------------------------------------------------------
# Assignment selection
# ---------------------------------------------------------------------------

def track_permutations(n_tracks: int) -> List[tuple[int, ...]]:
    """All assignments in lexicographic order; perm[i] is the label track paired with prediction track i."""
    return list(permutations(range(n_tracks)))


def assignment_totals(cost: np.ndarray, perms: Sequence[tuple[int, ...]]) -> np.ndarray:
    """Summed pair costs [..., P] of each assignment, added in prediction-track order."""
    totals = []
    for perm in perms:
        total = cost[..., 0, perm[0]]
        for i in range(1, len(perm)):
            total = total + cost[..., i, perm[i]]
        totals.append(total)
    return np.stack(totals, axis=-1)


def chunk_segmentation(labels: FrameLabels) -> List[Chunk]:
    """Split frames wherever the set of active events changes."""
    n = labels.n_frames
    if n == 0:
        return [Chunk(0, 0)]
    events = labels.events or [frozenset()] * n
    chunks, start = [], 0
    for t in range(1, n):
        if events[t] != events[t - 1]:
            chunks.append(Chunk(start, t))
            start = t
    chunks.append(Chunk(start, n))
    return chunks


def _best(totals: np.ndarray, perms) -> tuple[int, ...]:
    return perms[int(np.argmin(totals))]


def _hungarian(cost: np.ndarray) -> tuple[int, ...]:
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return tuple(int(c) for c in perm)


def cpit_chunks(cost: np.ndarray, labels: FrameLabels) -> List[Chunk]:
    """Chunks of one example with the assignment minimising each chunk's summed loss."""
    m = cost.shape[-1]
    perms = track_permutations(m) if m <= MAX_ENUMERATED_TRACKS else None
    chunks = chunk_segmentation(labels)
    for chunk in chunks:
        if chunk.n_frames == 0:
            chunk.permutation = tuple(range(m))
            continue
        span = cost[chunk.start:chunk.end]
        if perms is None:
            chunk.permutation = _hungarian(span.sum(axis=0))
        else:
            chunk.permutation = _best(assignment_totals(span, perms).sum(axis=0), perms)
    return chunks


def select_assignments(cost: np.ndarray, labels: Sequence[FrameLabels], method: str = "tpit") -> np.ndarray:
    """
    Label track paired with each prediction track

    Args:
        cost: [B, T, M, M] pair costs (prediction x label)
        labels: FrameLabels per batch element (chunk boundaries for cPIT)
        method: 'tpit', 'cpit' or 'fixed'

    Returns:
        int array [B, T, M]
    """
    if method not in METHODS:
        raise ConfigError(f"Unknown PIT method: {method}")
    b, t, m, _ = cost.shape
    assign = np.broadcast_to(np.arange(m), (b, t, m)).copy()
    if method == "fixed" or t == 0:
        return assign
    if method == "cpit":
        for bi in range(b):
            for chunk in cpit_chunks(cost[bi], labels[bi]):
                assign[bi, chunk.start:chunk.end] = chunk.permutation
        return assign
    if m <= MAX_ENUMERATED_TRACKS:
        perms = track_permutations(m)
        choice = np.argmin(assignment_totals(cost, perms), axis=-1)
        return np.asarray(perms)[choice]
    logger.debug("Assigning %d tracks per frame by linear assignment", m)
    for bi in range(b):
        for ti in range(t):
            assign[bi, ti] = _hungarian(cost[bi, ti])
    return assign


def selection_matrix(assign: np.ndarray) -> np.ndarray:
    """One-hot [B, T, M, M] form of an assignment."""
    b, t, m = assign.shape
    s = np.zeros((b, t, m, m))
    bi, ti, mi = np.meshgrid(np.arange(b), np.arange(t), np.arange(m), indexing="ij")
    s[bi, ti, mi, assign] = 1.0
    return s


def pit_loss(sed, doa, labels, method: str = "tpit", beta: float = 1.0, task: str = "joint") -> Tensor:
    """Frame-averaged loss under the selected track assignment."""
    sed, doa, labels = _as_batch(sed, doa, labels)
    cost = pairwise_costs(sed, doa, labels, beta, task)
    if cost.shape[1] == 0:
        raise DimensionError("Cannot compute a loss over zero frames")
    assign = select_assignments(cost.data, labels, method)
    picked = ops.mul(cost, selection_matrix(assign).astype(cost.dtype))
    frame = ops.sum(ops.sum(picked, axis=3), axis=2)
    return ops.mean(frame)


def tpit_loss(sed, doa, labels, beta: float = 1.0, task: str = "joint") -> Tensor:
    """Frame-level permutation-invariant loss."""
    return pit_loss(sed, doa, labels, "tpit", beta, task)


def cpit_loss(sed, doa, labels, beta: float = 1.0, task: str = "joint") -> Tensor:
    """Chunk-level permutation-invariant loss."""
    return pit_loss(sed, doa, labels, "cpit", beta, task)


def seldnet_loss(sed, doa, labels, beta: float = 1.0, task: str = "joint") -> Tensor:
    """
    Class-wise loss for the per-class output format

    The DoA target of a class is the direction of its lowest active track;
    DoA error counts only for active classes.

    Args:
        sed: [B, T, K] probabilities
        doa: [B, T, K, 3]
        labels: one FrameLabels per batch element
    """
    if task not in TASKS:
        raise ConfigError(f"Unknown loss task: {task}")
    sed, doa, labels = _as_batch(sed, doa, labels)
    b, t, k = sed.shape
    y = np.zeros((b, t, k), dtype=sed.dtype)
    g = np.zeros((b, t, k, 3), dtype=sed.dtype)
    for bi, item in enumerate(labels):
        for m in reversed(range(item.n_tracks)):
            ti = np.nonzero(item.active[:, m])[0]
            ci = item.class_index[ti, m]
            y[bi, ti, ci] = 1.0
            g[bi, ti, ci] = item.doa[ti, m]

    terms = []
    if task in ("joint", "sed"):
        terms.append(ops.mean(_bce(sed, y), axis=2))
    if task in ("joint", "doa"):
        diff = ops.sub(doa, g)
        mse = ops.sum(ops.mul(ops.mean(ops.mul(diff, diff), axis=3), y), axis=2)
        terms.append(ops.mul(mse, float(beta)) if task == "joint" else mse)
    frame = terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])
    return ops.mean(frame)


def compute_loss(sed, doa, labels, config: LossConfig, output_format: str = "trackwise") -> Tensor:
    """Loss selected by the run config for the model's output format."""
    if output_format == "seldnet":
        return seldnet_loss(sed, doa, labels, config.beta, config.task)
    return pit_loss(sed, doa, labels, config.method, config.beta, config.task)

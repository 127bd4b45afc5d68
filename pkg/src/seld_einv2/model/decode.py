"""
Turning network outputs into label-format event rows.

Decoded rows use the label CSV layout, so predictions and references can be
scored symmetrically. Output frame t of a segment is label frame
``frame_offset + t``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from seld_einv2.data.foa import direction_of
from seld_einv2.data.labels import LabelRow, PredictionRow, rows_by_frame
from seld_einv2.errors import ConfigError
from seld_einv2.metrics import angular_distance
from seld_einv2.model.einv2 import Prediction, SeldnetPrediction, TrackPrediction

logger = logging.getLogger(__name__)

ORACLES = ("none", "sed", "doa")


def _row(frame: int, class_index: int, track: int, vector: Sequence[float]) -> PredictionRow:
    vector = np.asarray(vector, dtype=np.float64)
    if not np.any(vector):
        logger.warning("Zero-norm DoA at frame %d (class %d); emitting (0, 0)", frame, class_index)
        return PredictionRow(frame=frame, class_index=class_index, track=track,
                             azimuth=0.0, elevation=0.0, flagged=True)
    azimuth, elevation = direction_of(vector)
    return PredictionRow(frame=frame, class_index=class_index, track=track,
                         azimuth=azimuth, elevation=elevation)


def decode_trackwise(pred: TrackPrediction, threshold: float = 0.5, frame_offset: int = 0) -> List[PredictionRow]:
    """
    Decode a trackwise prediction

    Each track emits its argmax class when that probability reaches the
    threshold. Two tracks may emit the same class at different directions.

    Args:
        pred: sed [T, M, K], doa [T, M, 3]
        threshold: SED binarisation threshold
        frame_offset: label frame of output frame 0

    Returns:
        PredictionRow list ordered by (frame, track)
    """
    rows = []
    classes = np.argmax(pred.sed, axis=-1)
    n_frames, n_tracks = classes.shape
    for t in range(n_frames):
        for m in range(n_tracks):
            c = int(classes[t, m])
            if pred.sed[t, m, c] >= threshold:
                rows.append(_row(frame_offset + t, c, m, pred.doa[t, m]))
    return rows


def decode_seldnet_format(pred: SeldnetPrediction, threshold: float = 0.5,
                          frame_offset: int = 0) -> List[PredictionRow]:
    """Per class: emit (class, own DoA) when its probability reaches the threshold (one DoA per class)."""
    rows = []
    for t, c in zip(*np.nonzero(pred.sed >= threshold)):
        rows.append(_row(frame_offset + int(t), int(c), 0, pred.doa[t, c]))
    return rows


def decode(pred: Prediction, threshold: float = 0.5, frame_offset: int = 0) -> List[PredictionRow]:
    if isinstance(pred, TrackPrediction):
        return decode_trackwise(pred, threshold, frame_offset)
    return decode_seldnet_format(pred, threshold, frame_offset)


# ---------------------------------------------------------------------------
# Oracle substitution
# ---------------------------------------------------------------------------

def oracle_doa_rows(pred_rows: Iterable[PredictionRow], ref_rows: Iterable[LabelRow]) -> List[PredictionRow]:
    """
    Replace predicted directions by reference directions

    Per frame and class, predictions are matched to references by angle and
    take the matched reference's direction; unmatched predictions keep their
    own. Scores then measure detection alone.
    """
    refs = rows_by_frame(ref_rows)
    out = []
    for frame, preds in sorted(rows_by_frame(pred_rows).items()):
        by_class: Dict[int, List[PredictionRow]] = defaultdict(list)
        for row in preds:
            by_class[row.class_index].append(row)
        for c, group in sorted(by_class.items()):
            candidates = [r for r in refs.get(frame, []) if r.class_index == c]
            replaced = list(group)
            if candidates:
                cost = np.array([[angular_distance(p.doa, r.doa) for r in candidates] for p in group])
                for i, j in zip(*linear_sum_assignment(cost)):
                    ref = candidates[j]
                    replaced[i] = group[i].model_copy(
                        update={"azimuth": ref.azimuth, "elevation": ref.elevation, "flagged": False})
            out.extend(replaced)
    return sorted(out, key=lambda r: (r.frame, r.track, r.class_index))


def oracle_sed_rows(pred: Prediction, ref_rows: Iterable[LabelRow], frame_offset: int = 0) -> List[PredictionRow]:
    """
    Replace predicted activity by reference activity

    Every reference event is emitted with a predicted direction: the class's
    own DoA vector for the per-class format, or for trackwise output the DoA
    of the track assigned to it by minimum angle. Scores then measure
    localization alone.
    """
    n_frames = pred.sed.shape[0]
    out = []
    for frame, refs in sorted(rows_by_frame(ref_rows).items()):
        t = frame - frame_offset
        if not 0 <= t < n_frames:
            continue
        if isinstance(pred, SeldnetPrediction):
            out.extend(_row(frame, r.class_index, r.track, pred.doa[t, r.class_index]) for r in refs)
            continue
        doas = pred.doa[t]
        cost = np.array([[angular_distance(r.doa, d) if np.any(d) else 180.0 for d in doas] for r in refs])
        tracks = dict(zip(*linear_sum_assignment(cost)))
        for i, r in enumerate(refs):
            m = int(tracks[i]) if i in tracks else int(np.argmin(cost[i]))
            out.append(_row(frame, r.class_index, m, doas[m]))
    return out


def decode_with_oracle(pred: Prediction, threshold: float = 0.5, frame_offset: int = 0, oracle: str = "none",
                       ref_rows: Optional[Sequence[LabelRow]] = None) -> List[PredictionRow]:
    """Decode, optionally substituting reference activity ('sed') or reference directions ('doa')."""
    if oracle not in ORACLES:
        raise ConfigError(f"Unknown oracle mode: {oracle}")
    if oracle != "none" and ref_rows is None:
        raise ConfigError(f"Oracle mode '{oracle}' needs reference rows")
    if oracle == "sed":
        return oracle_sed_rows(pred, ref_rows, frame_offset)
    rows = decode(pred, threshold, frame_offset)
    if oracle == "doa":
        return oracle_doa_rows(rows, ref_rows)
    return rows

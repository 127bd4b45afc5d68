"""Fixed-length, non-overlapping segmentation of clips."""

from __future__ import annotations

from dataclasses import replace
from typing import List

import numpy as np

from seld_einv2.data.labels import FoaClip, shift_rows


def n_segments(n_samples: int, segment_samples: int) -> int:
    """ceil(n_samples / segment_samples), at least one."""
    return max(1, -(-n_samples // segment_samples))


def segment_clips(clip: FoaClip, segment_seconds: float = 4.0) -> List[FoaClip]:
    """
    Cut a clip into contiguous segments

    The last segment is zero padded to full length; its label rows past the
    end of the audio are simply absent. Rows are moved to segment-local frame
    indices.

    Args:
        clip: full-length clip
        segment_seconds: segment length, a whole number of label frames

    Returns:
        Segments in time order with ``segment`` set to their position
    """
    seg_samples = int(round(segment_seconds * clip.sample_rate))
    seg_frames = int(round(segment_seconds / clip.label_hop))
    count = n_segments(clip.n_samples, seg_samples)
    padded = np.zeros((clip.audio.shape[0], count * seg_samples), dtype=clip.audio.dtype)
    padded[:, :clip.n_samples] = clip.audio
    segments = []
    for s in range(count):
        lo, hi = s * seg_frames, (s + 1) * seg_frames
        rows = [row for row in clip.rows if lo <= row.frame < hi]
        segments.append(replace(
            clip,
            audio=padded[:, s * seg_samples:(s + 1) * seg_samples],
            rows=shift_rows(rows, -lo),
            segment=s,
        ))
    return segments

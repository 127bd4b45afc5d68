#!/usr/bin/env python3
"""
Label rows, clips and the label CSV format.

A label file holds one row per active event per 100 ms frame:

    frame,class,track,azimuth,elevation

without a header, angles in integer degrees. Prediction files written by
``seld infer`` use the same layout so either side can be scored against the
other.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from seld_einv2.data.foa import FoaRotation, unit_vector
from seld_einv2.errors import FormatError

CSV_FIELDS = ("frame", "class", "track", "azimuth", "elevation")


class LabelRow(BaseModel):
    """Schema for one reference event at one label frame"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    frame: int = Field(..., ge=0, description="Frame index on the 100 ms grid")
    class_index: int = Field(..., ge=0, alias="class", description="Event class")
    track: int = Field(..., ge=0, description="Track slot the event occupies")
    azimuth: float = Field(..., description="Degrees in [-180, 180)")
    elevation: float = Field(..., description="Degrees in [-45, 45]")

    @field_validator("azimuth")
    @classmethod
    def validate_azimuth(cls, v):
        if not -180.0 <= v < 180.0:
            raise ValueError(f"Azimuth out of range [-180, 180): {v}")
        return v

    @field_validator("elevation")
    @classmethod
    def validate_elevation(cls, v):
        if not -45.0 <= v <= 45.0:
            raise ValueError(f"Elevation out of range [-45, 45]: {v}")
        return v

    @property
    def doa(self) -> tuple[float, float, float]:
        return unit_vector(self.azimuth, self.elevation)

    def to_csv_row(self) -> list:
        return [self.frame, self.class_index, self.track, int(round(self.azimuth)), int(round(self.elevation))]


class PredictionRow(LabelRow):
    """A decoded event; elevation may cover the whole sphere"""
    flagged: bool = Field(default=False, description="Decoded from a zero-norm DoA vector")

    @field_validator("elevation")
    @classmethod
    def validate_elevation(cls, v):
        if not -90.0 <= v <= 90.0:
            raise ValueError(f"Elevation out of range [-90, 90]: {v}")
        return v

    def to_csv_row(self) -> list:
        azimuth = int(round(self.azimuth))
        if azimuth >= 180:
            azimuth -= 360
        return [self.frame, self.class_index, self.track, azimuth, int(round(self.elevation))]


def _row_from_fields(values: Sequence[str], row_type=LabelRow) -> LabelRow:
    if len(values) != len(CSV_FIELDS):
        raise FormatError(f"Expected {len(CSV_FIELDS)} fields, got {len(values)}")
    data = dict(zip(CSV_FIELDS, values))
    return row_type(
        frame=int(data["frame"]),
        class_index=int(data["class"]),
        track=int(data["track"]),
        azimuth=float(data["azimuth"]),
        elevation=float(data["elevation"]),
    )


def parse_label_csv(text: str, predictions: bool = False, n_classes: Optional[int] = None) -> List[LabelRow]:
    """
    Parse label CSV text into rows

    Args:
        text: file contents; a leading header line is tolerated
        predictions: validate as prediction rows (elevation in [-90, 90])
        n_classes: reject class indices outside [0, n_classes)

    Returns:
        Rows sorted by (frame, track)
    """
    row_type = PredictionRow if predictions else LabelRow
    rows: List[LabelRow] = []
    for line_no, values in enumerate(csv.reader(io.StringIO(text)), 1):
        if not values or not "".join(values).strip():
            continue
        if line_no == 1 and values[0].strip().lower() == "frame":
            continue
        try:
            row = _row_from_fields([v.strip() for v in values], row_type)
        except (ValueError, ValidationError) as e:
            raise FormatError(f"Invalid label row {line_no}: {_first_error(e)}")
        if n_classes is not None and row.class_index >= n_classes:
            raise FormatError(f"Invalid label row {line_no}: class {row.class_index} >= {n_classes}")
        rows.append(row)
    rows.sort(key=lambda r: (r.frame, r.track))
    return rows


def _first_error(e: Exception) -> str:
    if isinstance(e, ValidationError):
        err = e.errors()[0]
        return f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}"
    return str(e)


def read_label_csv(path: str | Path, predictions: bool = False, n_classes: Optional[int] = None) -> List[LabelRow]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Label file not found: {path}")
    try:
        return parse_label_csv(path.read_text(encoding="utf-8"), predictions, n_classes)
    except FormatError as e:
        raise FormatError(f"{path}: {e}")


def format_label_csv(rows: Iterable[LabelRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for row in sorted(rows, key=lambda r: (r.frame, r.track, r.class_index)):
        writer.writerow(row.to_csv_row())
    return buffer.getvalue()


def write_label_csv(path: str | Path, rows: Iterable[LabelRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_label_csv(rows), encoding="utf-8")
    return path


def rows_by_frame(rows: Iterable[LabelRow]) -> Dict[int, List[LabelRow]]:
    grouped: Dict[int, List[LabelRow]] = defaultdict(list)
    for row in rows:
        grouped[row.frame].append(row)
    return dict(grouped)


def shift_rows(rows: Iterable[LabelRow], offset: int) -> List[LabelRow]:
    """Move rows by ``offset`` frames."""
    return [row.model_copy(update={"frame": row.frame + offset}) for row in rows]


def rotate_rows(rows: Iterable[LabelRow], rotation: FoaRotation) -> List[LabelRow]:
    rotated = []
    for row in rows:
        azimuth, elevation = rotation.apply_direction(row.azimuth, row.elevation)
        rotated.append(row.model_copy(update={"azimuth": azimuth, "elevation": elevation}))
    return rotated


@dataclass
class FoaClip:
    """Four-channel FOA audio plus its frame-level labels."""
    clip_id: str
    audio: np.ndarray  # [4, L]
    sample_rate: int
    rows: List[LabelRow] = field(default_factory=list)
    segment: int = 0
    label_hop: float = 0.1

    @property
    def n_samples(self) -> int:
        return self.audio.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def n_label_frames(self) -> int:
        return int(round(self.duration / self.label_hop))

    def transformed(self, rotation: FoaRotation) -> "FoaClip":
        return replace(self, audio=rotation.apply_audio(self.audio), rows=rotate_rows(self.rows, rotation))


@dataclass
class FrameLabels:
    """
    Track-slot targets of one segment

    active [T, M], class_index [T, M] (-1 where inactive), doa [T, M, 3] unit
    vectors (zero where inactive), and events[t]: the set of active
    (class, track, azimuth, elevation) tuples used for chunk boundaries.
    An event is identified by its class and track together with its
    direction, so a hand-off between tracks starts a new chunk.
    """
    active: np.ndarray
    class_index: np.ndarray
    doa: np.ndarray
    events: List[frozenset] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.active.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.active.shape[1]

    def sed_targets(self, n_classes: int) -> np.ndarray:
        """One-hot-or-zero [T, M, K]."""
        targets = np.zeros(self.active.shape + (n_classes,))
        t, m = np.nonzero(self.active)
        targets[t, m, self.class_index[t, m]] = 1.0
        return targets

    def permuted(self, per_frame_perm: Sequence[Sequence[int]]) -> "FrameLabels":
        """Relabel track slots frame by frame (perm[t][m] = source slot)."""
        idx = np.asarray(per_frame_perm)
        rows = np.arange(self.n_frames)[:, None]
        return FrameLabels(self.active[rows, idx], self.class_index[rows, idx], self.doa[rows, idx], list(self.events))

    @classmethod
    def from_rows(cls, rows: Iterable[LabelRow], n_frames: int, n_tracks: int,
                  frame_offset: int = 0, strict: bool = True) -> "FrameLabels":
        active = np.zeros((n_frames, n_tracks), dtype=bool)
        class_index = np.full((n_frames, n_tracks), -1, dtype=np.int64)
        doa = np.zeros((n_frames, n_tracks, 3))
        events: List[set] = [set() for _ in range(n_frames)]
        for row in rows:
            t = row.frame - frame_offset
            if not 0 <= t < n_frames:
                continue
            if row.track >= n_tracks:
                raise FormatError(f"Track {row.track} at frame {row.frame} exceeds {n_tracks} tracks")
            if strict and active[t, row.track]:
                raise FormatError(f"Two events share track {row.track} at frame {row.frame}")
            active[t, row.track] = True
            class_index[t, row.track] = row.class_index
            doa[t, row.track] = row.doa
            events[t].add((row.class_index, row.track, row.azimuth, row.elevation))
        return cls(active, class_index, doa, [frozenset(e) for e in events])

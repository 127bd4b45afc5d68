#!/usr/bin/env python3
"""
Dataset Reader for seld_einv2
Lists splits and clips of a dataset directory, validates labels, builds the
feature cache and statistics sidecar, and serves training batches.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import soundfile as sf
import yaml

from seld_einv2.data.augment import spec_augment
from seld_einv2.data.foa import FoaRotation, rotate_features
from seld_einv2.data.labels import FoaClip, FrameLabels, LabelRow, read_label_csv, rotate_rows
from seld_einv2.data.scene import MANIFEST_NAME, read_clip
from seld_einv2.data.segment import n_segments, segment_clips
from seld_einv2.errors import ConfigError, FormatError
from seld_einv2.features import (
    FeatureClip,
    FeatureStats,
    StatsAccumulator,
    featurize_waveform,
    load_feature_cache,
    save_feature_cache,
)
from seld_einv2.run_config import RunConfig

logger = logging.getLogger(__name__)

STATS_PATH = Path("stats") / "feature_stats.bin"
FEATURE_DIR = "features"
TRAIN_SPLIT = "train"


@dataclass(frozen=True)
class SegmentRef:
    split: str
    clip_id: str
    segment: int


@dataclass
class Batch:
    """Stacked branch inputs and per-example frame labels."""
    sed: np.ndarray  # [B, 4, T, M]
    doa: np.ndarray  # [B, 7, T, M]
    labels: List[FrameLabels]
    refs: List[SegmentRef] = field(default_factory=list)
    rows: List[List[LabelRow]] = field(default_factory=list)

    def __len__(self) -> int:
        return self.sed.shape[0]


class SeldDataset:
    """Reader class for a synthetic SELD dataset directory"""

    def __init__(self, root: str | Path, config: RunConfig, cache_size: int = 8):
        """
        Initialize the reader with the dataset directory

        Args:
            root: dataset root holding foa/, metadata/ and manifest.yaml
            config: run config (feature, model and augmentation settings)
            cache_size: number of clips whose raw features stay in memory
        """
        self.root = Path(root)
        if not self.root.exists():
            raise FileNotFoundError(f"Dataset directory not found: {root}")
        self.config = config
        self.manifest = self._read_manifest()
        self._cache: "OrderedDict[tuple[str, str], tuple[np.ndarray, np.ndarray]]" = OrderedDict()
        self._cache_size = cache_size
        self._stats: Optional[FeatureStats] = None
        self._labels: Dict[tuple[str, str], List[LabelRow]] = {}

    def _read_manifest(self) -> Dict:
        path = self.root / MANIFEST_NAME
        if not path.exists():
            return {}
        try:
            return yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise FormatError(f"Invalid manifest {path}: {e}")

    # -- listing ----------------------------------------------------------

    def list_splits(self) -> List[str]:
        if "splits" in self.manifest:
            return list(self.manifest["splits"])
        foa = self.root / "foa"
        return sorted(p.name for p in foa.iterdir() if p.is_dir()) if foa.exists() else []

    def list_clips(self, split: str) -> List[str]:
        """
        List the clip ids of a split

        Args:
            split: split name, e.g. 'train'

        Returns:
            Clip ids in manifest order (sorted file names without a manifest)
        """
        if split in self.manifest.get("splits", {}):
            return list(self.manifest["splits"][split])
        folder = self.root / "foa" / split
        if not folder.exists():
            raise FileNotFoundError(f"Split not found: {folder}")
        return sorted(p.stem for p in folder.glob("*.wav"))

    # -- raw access -------------------------------------------------------

    def read_clip(self, split: str, clip_id: str) -> FoaClip:
        return read_clip(self.root, split, clip_id, self.config.features.label_hop)

    def read_labels(self, split: str, clip_id: str) -> List[LabelRow]:
        """Read and validate the label rows of one clip"""
        key = (split, clip_id)
        if key not in self._labels:
            self._labels[key] = read_label_csv(self.root / "metadata" / split / f"{clip_id}.csv",
                                               n_classes=self.config.model.n_classes)
        return self._labels[key]

    def segment_count(self, split: str, clip_id: str) -> int:
        wav = self.root / "foa" / split / f"{clip_id}.wav"
        if not wav.exists():
            raise FileNotFoundError(f"Audio file not found: {wav}")
        return n_segments(sf.info(str(wav)).frames, self.config.features.segment_samples)

    def segments(self, split: str) -> List[SegmentRef]:
        refs = []
        for clip_id in self.list_clips(split):
            refs.extend(SegmentRef(split, clip_id, s) for s in range(self.segment_count(split, clip_id)))
        return refs

    def segment_rows(self, ref: SegmentRef) -> List[LabelRow]:
        """Label rows of one segment at segment-local frames."""
        frames = self.config.features.labels_per_segment
        lo = ref.segment * frames
        return [row.model_copy(update={"frame": row.frame - lo})
                for row in self.read_labels(ref.split, ref.clip_id) if lo <= row.frame < lo + frames]

    # -- feature cache ----------------------------------------------------

    def cache_path(self, split: str, clip_id: str) -> Path:
        return self.root / FEATURE_DIR / split / f"{clip_id}.npz"

    @property
    def stats_path(self) -> Path:
        return self.root / STATS_PATH

    def featurize(self, progress=None) -> FeatureStats:
        """
        Build the feature cache of every split and the training statistics

        Args:
            progress: optional ProgressReporter for status lines

        Returns:
            FeatureStats written to stats/feature_stats.bin
        """
        features = self.config.features
        accumulator = StatsAccumulator()
        for split in self.list_splits():
            clip_ids = self.list_clips(split)
            for i, clip_id in enumerate(clip_ids, 1):
                clip = self.read_clip(split, clip_id)
                if clip.sample_rate != features.sample_rate:
                    raise FormatError(
                        f"{clip_id}: sample rate {clip.sample_rate} differs from configured {features.sample_rate}"
                    )
                mels, intensities = [], []
                for segment in segment_clips(clip, features.segment_seconds):
                    mel, intensity = featurize_waveform(segment.audio, features)
                    mels.append(mel)
                    intensities.append(intensity)
                mel_stack, int_stack = np.stack(mels), np.stack(intensities)
                save_feature_cache(self.cache_path(split, clip_id), clip_id, mel_stack, int_stack, features)
                if split == TRAIN_SPLIT:
                    accumulator.update(mel_stack)
                if progress is not None and (i % 10 == 0 or i == len(clip_ids)):
                    progress.status_update(f"Featurized {split}: {i}/{len(clip_ids)} clips")
        if accumulator.count == 0:
            raise ConfigError(f"Dataset {self.root} has no '{TRAIN_SPLIT}' clips to compute statistics from")
        stats = accumulator.finalize()
        stats.save(self.stats_path)
        self._stats = stats
        logger.info("Feature statistics written to %s", self.stats_path)
        return stats

    def stats(self) -> FeatureStats:
        if self._stats is None:
            self._stats = FeatureStats.load(self.stats_path)
        return self._stats

    def raw_features(self, split: str, clip_id: str) -> tuple[np.ndarray, np.ndarray]:
        key = (split, clip_id)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        value = load_feature_cache(self.cache_path(split, clip_id), self.config.features)
        self._cache[key] = value
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return value

    # -- examples ---------------------------------------------------------

    def load_segment(self, ref: SegmentRef, rotation: Optional[FoaRotation] = None) -> tuple[FeatureClip, List[LabelRow]]:
        """Standardised features and label rows of one segment, optionally rotated."""
        mel_stack, int_stack = self.raw_features(ref.split, ref.clip_id)
        if ref.segment >= mel_stack.shape[0]:
            raise FormatError(f"{ref.clip_id} has {mel_stack.shape[0]} segments, asked for {ref.segment}")
        mel, intensity = mel_stack[ref.segment], int_stack[ref.segment]
        rows = self.segment_rows(ref)
        if rotation is not None and not rotation.is_identity:
            mel, intensity = rotate_features(mel, intensity, rotation)
            rows = rotate_rows(rows, rotation)
        raw = FeatureClip(sed_input=mel, doa_input=np.concatenate([mel, intensity], axis=0),
                          clip_id=ref.clip_id, segment=ref.segment)
        return self.stats().apply(raw), rows

    def make_batch(self, refs: Sequence[SegmentRef], rng: Optional[np.random.Generator] = None,
                   augment: bool = False, dtype=np.float32) -> Batch:
        """
        Assemble a batch

        Args:
            refs: segments to load
            rng: drives augmentation; required when augment is set
            augment: apply the rotation / SpecAugment settings of the train config

        Returns:
            Batch with labels laid out for n_tracks track slots
        """
        settings = self.config.train.augment
        frames = self.config.features.labels_per_segment
        seds, doas, labels, all_rows = [], [], [], []
        for ref in refs:
            rotation = None
            if augment and settings.rotate:
                rotation = FoaRotation.from_index(int(rng.integers(16)))
            features, rows = self.load_segment(ref, rotation)
            sed, doa = features.sed_input, features.doa_input
            if augment and settings.spec_augment:
                sed, doa = spec_augment(sed, doa, rng, settings)
            seds.append(sed)
            doas.append(doa)
            labels.append(FrameLabels.from_rows(rows, frames, self.config.model.n_tracks))
            all_rows.append(rows)
        return Batch(np.stack(seds).astype(dtype), np.stack(doas).astype(dtype), labels, list(refs), all_rows)

    def iter_batches(self, refs: Sequence[SegmentRef], batch_size: int, rng: Optional[np.random.Generator] = None,
                     shuffle: bool = False, augment: bool = False, dtype=np.float32) -> Iterator[Batch]:
        order = np.arange(len(refs))
        if shuffle:
            order = rng.permutation(len(refs))
        for start in range(0, len(order), batch_size):
            yield self.make_batch([refs[i] for i in order[start:start + batch_size]], rng, augment, dtype)

"""
Synthetic FOA scene generation.

Every class has a fixed spectral signature (a four-harmonic tone stack plus
a band of noise) so detection is learnable, events are static plane waves on
the integer-degree grid, and labels are exact at 100 ms resolution.

Dataset layout written by ``synth_scene``:

    <root>/foa/<split>/<clip>.wav        4-channel 16-bit PCM
    <root>/metadata/<split>/<clip>.csv   frame,class,track,azimuth,elevation
    <root>/manifest.yaml                 splits, clip ids and the generation spec
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import soundfile as sf
import yaml
from scipy.signal import butter, sosfilt

from seld_einv2.data.foa import foa_encode
from seld_einv2.data.labels import FoaClip, LabelRow, read_label_csv, write_label_csv
from seld_einv2.run_config import DatasetConfig, FeatureConfig

logger = logging.getLogger(__name__)

N_HARMONICS = 4
NOISE_BANDWIDTH = 200.0
FADE_SECONDS = 0.01
PEAK_LEVEL = 0.9
THINNING_WARN_RATIO = 0.2
MANIFEST_NAME = "manifest.yaml"


@dataclass(frozen=True)
class ScheduledEvent:
    """One static event placed on the label grid."""
    class_index: int
    onset_frame: int
    n_frames: int
    azimuth: int
    elevation: int
    track: int = 0
    gain: float = 1.0

    @property
    def end_frame(self) -> int:
        return self.onset_frame + self.n_frames


def class_fundamental(class_index: int) -> float:
    return 220.0 * 2.0 ** (class_index / 7.0)


def class_noise_center(class_index: int) -> float:
    return 500.0 + 400.0 * class_index


def class_signature(class_index: int, n_samples: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS mono signature of one event of ``class_index``."""
    t = np.arange(n_samples) / sample_rate
    f0 = class_fundamental(class_index)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=N_HARMONICS)
    tone = sum(np.sin(2.0 * np.pi * f0 * (h + 1) * t + phases[h]) / (h + 1) for h in range(N_HARMONICS))

    center = class_noise_center(class_index)
    nyquist = sample_rate / 2.0
    band = [max(center - NOISE_BANDWIDTH / 2, 1.0), min(center + NOISE_BANDWIDTH / 2, nyquist * 0.99)]
    sos = butter(4, band, btype="bandpass", fs=sample_rate, output="sos")
    noise = sosfilt(sos, rng.standard_normal(n_samples))
    noise /= max(np.sqrt(np.mean(noise ** 2)), 1e-12)

    signal = tone / np.sqrt(np.mean(tone ** 2) + 1e-12) + 0.5 * noise
    fade = min(int(FADE_SECONDS * sample_rate), n_samples // 2)
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade, endpoint=False)
        signal[:fade] *= ramp
        signal[n_samples - fade:] *= ramp[::-1]
    return signal / max(np.sqrt(np.mean(signal ** 2)), 1e-12)


def schedule_events(spec: DatasetConfig, n_frames: int, label_hop: float,
                    rng: np.random.Generator) -> List[ScheduledEvent]:
    """
    Place events with Poisson onsets under the polyphony cap

    Candidates that would push any frame above ``spec.max_polyphony`` are
    dropped. Each kept event takes the first track free over its whole span.
    """
    if spec.event_rate <= 0:
        return []
    clip_seconds = n_frames * label_hop
    onsets: List[float] = []
    t = rng.exponential(1.0 / spec.event_rate)
    while t < clip_seconds:
        onsets.append(t)
        t += rng.exponential(1.0 / spec.event_rate)

    occupancy = np.zeros((n_frames, spec.max_polyphony), dtype=bool)
    events: List[ScheduledEvent] = []
    rejected = 0
    lo, hi = spec.event_duration
    for onset in onsets:
        duration = rng.uniform(lo, hi)
        class_index = int(rng.integers(spec.n_classes))
        azimuth = int(rng.integers(spec.azimuth_range[0], spec.azimuth_range[1]))
        elevation = int(rng.integers(spec.elevation_range[0], spec.elevation_range[1] + 1))
        gain = float(rng.uniform(0.5, 1.0))

        start = int(np.floor(onset / label_hop))
        length = max(1, int(round(duration / label_hop)))
        end = min(start + length, n_frames)
        if start >= n_frames:
            continue
        free = [m for m in range(spec.max_polyphony) if not occupancy[start:end, m].any()]
        if not free:
            rejected += 1
            continue
        track = free[0]
        occupancy[start:end, track] = True
        events.append(ScheduledEvent(class_index, start, end - start, azimuth, elevation, track, gain))

    if onsets and rejected / len(onsets) > THINNING_WARN_RATIO:
        logger.warning(
            "Event rate %.2f/s exceeds the polyphony cap of %d: thinned %d of %d events",
            spec.event_rate, spec.max_polyphony, rejected, len(onsets),
        )
    return events


def event_rows(events: List[ScheduledEvent]) -> List[LabelRow]:
    """Frame-level label rows of scheduled events."""
    rows = []
    for event in events:
        for frame in range(event.onset_frame, event.end_frame):
            rows.append(LabelRow(frame=frame, class_index=event.class_index, track=event.track,
                                 azimuth=event.azimuth, elevation=event.elevation))
    rows.sort(key=lambda r: (r.frame, r.track))
    return rows


def render_events(events: List[ScheduledEvent], n_samples: int, sample_rate: int, label_hop: float,
                  rng: np.random.Generator, snr_db: Optional[float] = None) -> np.ndarray:
    """
    Mix scheduled events into FOA audio [4, n_samples]

    With ``snr_db`` set, Gaussian noise is added to W only at that ratio to the
    W-channel signal power. A clip without events stays silent.
    """
    audio = np.zeros((4, n_samples))
    hop_samples = int(round(label_hop * sample_rate))
    for event in events:
        start = event.onset_frame * hop_samples
        stop = min(event.end_frame * hop_samples, n_samples)
        if stop <= start:
            continue
        mono = event.gain * class_signature(event.class_index, stop - start, sample_rate, rng)
        audio[:, start:stop] += foa_encode(mono, event.azimuth, event.elevation)

    signal_power = float(np.mean(audio[0] ** 2))
    if snr_db is not None and signal_power > 0.0:
        noise_power = signal_power / 10.0 ** (snr_db / 10.0)
        audio[0] += np.sqrt(noise_power) * rng.standard_normal(n_samples)
    return audio


def synth_clip(spec: DatasetConfig, features: FeatureConfig, rng: np.random.Generator, clip_id: str) -> FoaClip:
    """Generate one clip with its labels."""
    n_frames = int(round(spec.clip_length / features.label_hop))
    n_samples = int(round(spec.clip_length * features.sample_rate))
    events = schedule_events(spec, n_frames, features.label_hop, rng)
    snr = float(rng.uniform(*spec.snr_db))
    audio = render_events(events, n_samples, features.sample_rate, features.label_hop, rng, snr)
    peak = float(np.max(np.abs(audio))) if audio.size else 0.0
    if peak > 0.0:
        audio *= PEAK_LEVEL / peak
    return FoaClip(clip_id=clip_id, audio=audio, sample_rate=features.sample_rate,
                   rows=event_rows(events), label_hop=features.label_hop)


def clip_rng(seed: int, split_index: int, clip_index: int) -> np.random.Generator:
    """Independent stream per clip so clips can be generated in any order."""
    return np.random.default_rng([int(seed), int(split_index), int(clip_index)])


def write_clip(root: Path, split: str, clip: FoaClip) -> None:
    wav_path = root / "foa" / split / f"{clip.clip_id}.wav"
    wav_path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(wav_path), clip.audio.T, clip.sample_rate, subtype="PCM_16")
    write_label_csv(root / "metadata" / split / f"{clip.clip_id}.csv", clip.rows)


def read_clip(root: Path, split: str, clip_id: str, label_hop: float = 0.1) -> FoaClip:
    wav_path = root / "foa" / split / f"{clip_id}.wav"
    if not wav_path.exists():
        raise FileNotFoundError(f"Audio file not found: {wav_path}")
    audio, sample_rate = sf.read(str(wav_path), dtype="float64", always_2d=True)
    rows = read_label_csv(root / "metadata" / split / f"{clip_id}.csv")
    return FoaClip(clip_id=clip_id, audio=audio.T, sample_rate=sample_rate, rows=rows, label_hop=label_hop)


def _synth_and_write(args) -> str:
    spec, features, root, split, split_index, clip_index = args
    clip_id = f"{split}_{clip_index:04d}"
    clip = synth_clip(spec, features, clip_rng(spec.seed, split_index, clip_index), clip_id)
    write_clip(root, split, clip)
    return clip_id


def synth_scene(spec: DatasetConfig, features: FeatureConfig, out_dir: Optional[str | Path] = None,
                progress=None) -> Dict[str, List[str]]:
    """
    Generate a whole dataset

    Args:
        spec: scene specification (splits, clip length, event statistics, seed)
        features: provides the sample rate and label hop
        out_dir: dataset root; defaults to ``spec.root``
        progress: optional ProgressReporter for status lines

    Returns:
        Mapping split -> clip ids
    """
    root = Path(out_dir or spec.root)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [
        (spec, features, root, split, split_index, clip_index)
        for split_index, (split, count) in enumerate(spec.splits.items())
        for clip_index in range(count)
    ]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            clip_ids = list(pool.map(_synth_and_write, jobs))
    else:
        clip_ids = []
        for i, job in enumerate(jobs, 1):
            clip_ids.append(_synth_and_write(job))
            if progress is not None and (i % 10 == 0 or i == len(jobs)):
                progress.status_update(f"Generated {i}/{len(jobs)} clips")

    splits: Dict[str, List[str]] = {split: [] for split in spec.splits}
    for job, clip_id in zip(jobs, clip_ids):
        splits[job[3]].append(clip_id)
    manifest = {
        "splits": splits,
        "sample_rate": features.sample_rate,
        "label_hop": features.label_hop,
        "spec": spec.model_dump(mode="json"),
    }
    (root / MANIFEST_NAME).write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")
    logger.info("Wrote %d clips to %s", len(clip_ids), root)
    return splits

"""
Feature extraction for the two EINV2 branches.

The SED branch sees the log-mel spectrogram of every FOA channel
([4, T, n_mels]); the DoA branch sees the same four log-mel channels followed
by the three mel-space intensity-vector components ([7, T, n_mels]).

Log-mel channels are standardised with global training-split statistics kept
in a sidecar file. Intensity channels are unit-normalised per bin and left
as they are.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from seld_einv2.errors import FormatError
from seld_einv2.run_config import FeatureConfig, feature_hash

logger = logging.getLogger(__name__)

N_FOA_CHANNELS = 4
N_INTENSITY_CHANNELS = 3


@dataclass
class StftResult:
    """All frames of one multichannel STFT, stored as [C, T, n_bins]."""
    spectra: np.ndarray
    sample_rate: int
    hop: int

    @property
    def n_frames(self) -> int:
        return self.spectra.shape[1]

    @property
    def n_bins(self) -> int:
        return self.spectra.shape[2]

    def __len__(self) -> int:
        return self.n_frames


@dataclass
class FeatureClip:
    """Branch inputs for one 4 s segment."""
    sed_input: np.ndarray  # [4, T, n_mels]
    doa_input: np.ndarray  # [7, T, n_mels]
    clip_id: str = ""
    segment: int = 0
    standardized: bool = False

    @property
    def n_frames(self) -> int:
        return self.sed_input.shape[1]


# ---------------------------------------------------------------------------
# STFT and mel bank
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def hann_window(size: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant)."""
    window = get_window("hann", size, fftbins=True)
    window.setflags(write=False)
    return window


def n_stft_frames(n_samples: int, hop: int) -> int:
    """Frame count of a centre-padded STFT: ceil(L / hop), at least one."""
    return max(1, -(-n_samples // hop))


def stft(wave: np.ndarray, fft_size: int = 1024, hop: int = 600, sample_rate: int = 24000) -> StftResult:
    """
    Short-time Fourier transform of a multichannel waveform

    The signal is zero padded by fft_size/2 at both ends so frame t is
    centred on sample t * hop.

    Args:
        wave: samples [C, L] (a 1-D signal is treated as one channel)
        fft_size: window and FFT length
        hop: frame advance in samples
        sample_rate: recorded on the result

    Returns:
        StftResult with spectra [C, ceil(L / hop), fft_size / 2 + 1]
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim == 1:
        wave = wave[None, :]
    if wave.ndim != 2:
        raise FormatError(f"stft expects [channels, samples], got shape {wave.shape}")
    n_frames = n_stft_frames(wave.shape[1], hop)
    half = fft_size // 2
    padded = np.pad(wave, ((0, 0), (half, half)))
    needed = (n_frames - 1) * hop + fft_size
    if padded.shape[1] < needed:
        padded = np.pad(padded, ((0, 0), (0, needed - padded.shape[1])))
    frames = sliding_window_view(padded, fft_size, axis=-1)[:, ::hop, :][:, :n_frames, :]
    spectra = np.fft.rfft(frames * hann_window(fft_size), n=fft_size, axis=-1)
    return StftResult(spectra=spectra, sample_rate=sample_rate, hop=hop)


def hz_to_mel(hz):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Centre frequency in Hz of every filter."""
    points = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return points[1:-1]


@lru_cache(maxsize=8)
def _mel_filterbank(n_mels: int, sample_rate: int, n_bins: int, fmin: float, fmax: float, norm: str) -> np.ndarray:
    fft_size = 2 * (n_bins - 1)
    bin_hz = np.arange(n_bins) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, center, hi = edges[:-2], edges[1:-1], edges[2:]

    rising = (bin_hz[:, None] - lo[None, :]) / (center - lo)[None, :]
    falling = (hi[None, :] - bin_hz[:, None]) / (hi - center)[None, :]
    bank = np.maximum(0.0, np.minimum(rising, falling))

    # Filters narrower than the bin spacing would be empty; they fall back to
    # the single nearest bin.
    empty = bank.max(axis=0) <= 0.0
    if empty.any():
        nearest = np.clip(np.rint(center[empty] * fft_size / sample_rate).astype(int), 0, n_bins - 1)
        bank[:, empty] = 0.0
        bank[nearest, np.flatnonzero(empty)] = 1.0
        logger.debug("%d mel filters narrower than one bin use the nearest bin", int(empty.sum()))

    if norm == "peak":
        bank /= bank.max(axis=0, keepdims=True)
    else:
        bank /= bank.sum(axis=0, keepdims=True)
    bank.setflags(write=False)
    return bank


def mel_filterbank(
    n_mels: int = 256,
    sample_rate: int = 24000,
    n_bins: int = 513,
    fmin: float = 0.0,
    fmax: Optional[float] = None,
    norm: str = "peak",
) -> np.ndarray:
    """
    Triangular HTK mel filterbank

    Args:
        n_mels: number of filters
        sample_rate: sampling rate in Hz
        n_bins: STFT bins (fft_size / 2 + 1)
        fmin, fmax: frequency span; fmax defaults to Nyquist
        norm: "peak" scales every triangle to a maximum of 1, "area" to unit sum

    Returns:
        Read-only array [n_bins, n_mels]
    """
    if norm not in ("peak", "area"):
        raise ValueError(f"Unknown mel normalisation: {norm}")
    fmax = sample_rate / 2.0 if fmax is None else float(fmax)
    return _mel_filterbank(int(n_mels), int(sample_rate), int(n_bins), float(fmin), fmax, norm)


def filterbank_for(config: FeatureConfig) -> np.ndarray:
    return mel_filterbank(
        config.n_mels, config.sample_rate, config.n_bins, config.fmin, config.upper_frequency, config.mel_norm
    )


# ---------------------------------------------------------------------------
# Branch features
# ---------------------------------------------------------------------------

def logmel(spec: StftResult, bank: np.ndarray, eps: float = 1e-10) -> np.ndarray:
    """10 * log10(|S|^2 @ bank + eps) per channel -> [C, T, n_mels]."""
    power = np.abs(spec.spectra) ** 2
    return 10.0 * np.log10(power @ bank + eps)


def foa_intensity(spec: StftResult, bank: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """
    Mel-space active intensity vectors

    I(t, f) = Re{conj(W) * [X, Y, Z]} is projected through the mel bank and
    every (t, mel) 3-vector is divided by its L2 norm + eps.

    Returns:
        [3, T, n_mels] with norms <= 1
    """
    if spec.spectra.shape[0] != N_FOA_CHANNELS:
        raise FormatError(f"foa_intensity needs 4 FOA channels, got {spec.spectra.shape[0]}")
    w = np.conj(spec.spectra[0])
    intensity = np.real(w[None] * spec.spectra[1:]) @ bank
    norm = np.sqrt((intensity ** 2).sum(axis=0, keepdims=True))
    return intensity / (norm + eps)


def featurize_waveform(wave: np.ndarray, config: FeatureConfig) -> tuple[np.ndarray, np.ndarray]:
    """Raw (unstandardised) log-mel [4, T, M] and intensity [3, T, M] of any-length FOA audio."""
    wave = np.asarray(wave)
    if wave.ndim != 2 or wave.shape[0] != N_FOA_CHANNELS:
        raise FormatError(f"Expected 4-channel FOA audio [4, samples], got shape {wave.shape}")
    spec = stft(wave, config.fft_size, config.hop, config.sample_rate)
    bank = filterbank_for(config)
    return logmel(spec, bank, config.log_eps), foa_intensity(spec, bank, config.intensity_eps)


def featurize_clip(clip, config: FeatureConfig, stats: Optional["FeatureStats"] = None) -> FeatureClip:
    """
    Build both branch inputs of a 4 s segment

    Args:
        clip: FoaClip (or a bare [4, L] array)
        config: feature settings
        stats: training-split statistics; the log-mel channels are
            standardised when given

    Returns:
        FeatureClip with sed_input [4, T, M] and doa_input [7, T, M]
    """
    wave = getattr(clip, "audio", clip)
    wave = np.asarray(wave)
    if wave.ndim != 2 or wave.shape[0] != N_FOA_CHANNELS:
        raise FormatError(f"Expected 4-channel FOA audio [4, samples], got shape {wave.shape}")
    if wave.shape[1] != config.segment_samples:
        raise FormatError(
            f"featurize_clip expects {config.segment_samples} samples ({config.segment_seconds:g} s), "
            f"got {wave.shape[1]}; segment the clip first"
        )
    mel, intensity = featurize_waveform(wave, config)
    features = FeatureClip(
        sed_input=mel,
        doa_input=np.concatenate([mel, intensity], axis=0),
        clip_id=getattr(clip, "clip_id", ""),
        segment=getattr(clip, "segment", 0),
    )
    return stats.apply(features) if stats is not None else features


# ---------------------------------------------------------------------------
# Statistics sidecar
# ---------------------------------------------------------------------------

STATS_MAGIC = b"SELDSTAT"


@dataclass
class FeatureStats:
    """
    Per-channel mean/std of the log-mel channels over the training split.

    Only the four log-mel channels are standardized, in both the SED and the
    DoA input. The three intensity channels are already unit-normalised per
    (frame, mel band) and pass through unchanged, so their norm stays <= 1.
    """
    mean: np.ndarray
    std: np.ndarray

    def apply(self, features: FeatureClip) -> FeatureClip:
        if features.standardized:
            return features
        n = len(self.mean)
        mean = self.mean.reshape(-1, 1, 1)
        std = self.std.reshape(-1, 1, 1)
        sed = (features.sed_input - mean) / std
        doa = features.doa_input.copy()
        doa[:n] = (doa[:n] - mean) / std
        return FeatureClip(sed.astype(features.sed_input.dtype), doa.astype(features.doa_input.dtype),
                           features.clip_id, features.segment, standardized=True)

    def save(self, path: str | Path) -> Path:
        """Binary layout: magic, uint32 channel count, float64 means, float64 stds."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        n = len(self.mean)
        blob = STATS_MAGIC + struct.pack("<I", n)
        blob += np.asarray(self.mean, dtype="<f8").tobytes() + np.asarray(self.std, dtype="<f8").tobytes()
        path.write_bytes(blob)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "FeatureStats":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Feature statistics not found: {path} (run `seld featurize` first)")
        blob = path.read_bytes()
        if blob[:8] != STATS_MAGIC:
            raise FormatError(f"{path} is not a feature statistics file")
        (n,) = struct.unpack_from("<I", blob, 8)
        values = np.frombuffer(blob, dtype="<f8", offset=12)
        if values.size != 2 * n:
            raise FormatError(f"Truncated feature statistics file: {path}")
        return cls(mean=values[:n].copy(), std=values[n:].copy())


@dataclass
class StatsAccumulator:
    """Streaming per-channel moments in double precision."""
    n_channels: int = N_FOA_CHANNELS
    count: int = 0
    total: np.ndarray = field(default=None)
    total_sq: np.ndarray = field(default=None)

    def __post_init__(self):
        self.total = np.zeros(self.n_channels)
        self.total_sq = np.zeros(self.n_channels)

    def update(self, mel: np.ndarray) -> None:
        """mel: [C, T, M] or a stack [S, C, T, M]."""
        values = np.asarray(mel, dtype=np.float64)
        if values.ndim == 3:
            values = values[None]
        per_channel = np.moveaxis(values, 1, 0).reshape(self.n_channels, -1)
        self.count += per_channel.shape[1]
        self.total += per_channel.sum(axis=1)
        self.total_sq += (per_channel ** 2).sum(axis=1)

    def finalize(self) -> FeatureStats:
        if self.count == 0:
            raise FormatError("No training features to compute statistics from")
        mean = self.total / self.count
        var = np.maximum(self.total_sq / self.count - mean ** 2, 0.0)
        return FeatureStats(mean=mean, std=np.maximum(np.sqrt(var), 1e-8))


# ---------------------------------------------------------------------------
# Feature cache
# ---------------------------------------------------------------------------

def save_feature_cache(path: str | Path, clip_id: str, mel: np.ndarray, intensity: np.ndarray,
                       config: FeatureConfig) -> Path:
    """One .npz per clip: raw log-mel [S, 4, T, M] and intensity [S, 3, T, M] of all its segments."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, mel=mel.astype(np.float32), intensity=intensity.astype(np.float32),
                 clip_id=np.array(clip_id), feature_hash=np.array(feature_hash(config)))
    return path


def load_feature_cache(path: str | Path, config: FeatureConfig) -> tuple[np.ndarray, np.ndarray]:
    """Read a cache file written for ``config``; stale caches are refused."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Feature cache not found: {path} (run `seld featurize` first)")
    with np.load(path) as data:
        cached_hash = str(data["feature_hash"])
        if cached_hash != feature_hash(config):
            raise FormatError(f"Feature cache {path} was built with a different feature config")
        return data["mel"], data["intensity"]

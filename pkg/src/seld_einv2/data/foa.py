"""
First-order ambisonics geometry.

Channel order is ACN (W, X, Y, Z) with SN3D gains. Angles are in degrees;
azimuth is counter-clockwise from the X axis, elevation up from the XY plane.

Trigonometry goes through ``cos_sin_deg`` which reduces the angle to its
quadrant before calling libm, so a quarter-turn rotation or a mirror of an
encoded signal is bit-identical to encoding at the transformed angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

_HALF_SQRT2 = math.sqrt(0.5)


def cos_sin_deg(angle: float) -> tuple[float, float]:
    """(cos, sin) of an angle in degrees, with quadrant symmetries held exactly."""
    q = math.floor((angle + 45.0) / 90.0)
    r = angle - 90.0 * q
    if abs(r) == 45.0:
        c, s = _HALF_SQRT2, math.copysign(_HALF_SQRT2, r)
    else:
        rad = math.radians(abs(r))
        c, s = math.cos(rad), math.copysign(math.sin(rad), r)
    q %= 4
    if q == 0:
        return c, s
    if q == 1:
        return -s, c
    if q == 2:
        return -c, -s
    return s, -c


def unit_vector(azimuth: float, elevation: float) -> tuple[float, float, float]:
    """Cartesian unit vector of a direction."""
    ca, sa = cos_sin_deg(azimuth)
    ce, se = cos_sin_deg(elevation)
    return ca * ce, sa * ce, se


def direction_of(vector: Iterable[float]) -> tuple[float, float]:
    """(azimuth in [-180, 180), elevation in [-90, 90]) of a nonzero 3-vector."""
    x, y, z = (float(v) for v in vector)
    azimuth = math.degrees(math.atan2(y, x))
    if azimuth >= 180.0:
        azimuth -= 360.0
    elevation = math.degrees(math.atan2(z, math.hypot(x, y)))
    return azimuth, elevation


def wrap_azimuth(azimuth: float) -> float:
    """Map an azimuth into [-180, 180)."""
    wrapped = (azimuth + 180.0) % 360.0 - 180.0
    return wrapped


def encoding_gains(azimuth: float, elevation: float) -> np.ndarray:
    """SN3D gains (1, cos az cos el, sin az cos el, sin el)."""
    x, y, z = unit_vector(azimuth, elevation)
    return np.array([1.0, x, y, z])


def foa_encode(mono: np.ndarray, azimuth: float, elevation: float) -> np.ndarray:
    """
    Encode a mono signal as a static plane wave

    Args:
        mono: samples [L]
        azimuth, elevation: direction in degrees

    Returns:
        samples [4, L] in (W, X, Y, Z) order
    """
    mono = np.asarray(mono, dtype=np.float64)
    return encoding_gains(azimuth, elevation)[:, None] * mono[None, :]


@dataclass(frozen=True)
class FoaRotation:
    """
    One element of the 16-element quarter-turn/mirror group

    Applied as: optional azimuth reflection (Y -> -Y), then rotation by
    quarter_turns * 90 degrees ((X, Y) -> (-Y, X) per turn), then optional
    elevation flip (Z -> -Z).
    """
    quarter_turns: int = 0
    reflect: bool = False
    flip_elevation: bool = False

    @property
    def is_identity(self) -> bool:
        return self.quarter_turns % 4 == 0 and not self.reflect and not self.flip_elevation

    @property
    def index(self) -> int:
        return (self.quarter_turns % 4) + 4 * int(self.reflect) + 8 * int(self.flip_elevation)

    @classmethod
    def from_index(cls, index: int) -> "FoaRotation":
        if not 0 <= index < 16:
            raise ValueError(f"Rotation index must be in [0, 16), got {index}")
        return cls(index % 4, bool(index & 4), bool(index & 8))

    def channel_map(self) -> tuple[list[int], np.ndarray]:
        """(source channel, sign) for the X, Y, Z outputs."""
        source, sign = [0, 1, 2], np.array([1.0, 1.0, 1.0])
        if self.reflect:
            sign[1] = -sign[1]
        for _ in range(self.quarter_turns % 4):
            # new X = -old Y, new Y = old X
            source = [source[1], source[0], source[2]]
            sign = np.array([-sign[1], sign[0], sign[2]])
        if self.flip_elevation:
            sign[2] = -sign[2]
        return source, sign

    def apply_audio(self, audio: np.ndarray) -> np.ndarray:
        """Transform FOA samples [4, L]."""
        source, sign = self.channel_map()
        out = np.empty_like(audio)
        out[0] = audio[0]
        for i in range(3):
            out[1 + i] = audio[1 + source[i]] if sign[i] > 0 else -audio[1 + source[i]]
        return out

    def apply_direction(self, azimuth: float, elevation: float) -> tuple[float, float]:
        if self.reflect:
            azimuth = -azimuth
        azimuth = wrap_azimuth(azimuth + 90.0 * (self.quarter_turns % 4))
        if self.flip_elevation:
            elevation = -elevation
        return azimuth, elevation

    def apply_features(self, mel: np.ndarray, intensity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Transform raw log-mel [..., 4, T, M] and intensity [..., 3, T, M] stacks.

        Log-mel is sign-blind, so only the channel permutation applies to it.
        """
        source, sign = self.channel_map()
        mel_out = mel.copy()
        for i in range(3):
            mel_out[..., 1 + i, :, :] = mel[..., 1 + source[i], :, :]
        int_out = np.empty_like(intensity)
        for i in range(3):
            channel = intensity[..., source[i], :, :]
            int_out[..., i, :, :] = channel if sign[i] > 0 else -channel
        return mel_out, int_out


ROTATIONS: tuple[FoaRotation, ...] = tuple(FoaRotation.from_index(i) for i in range(16))


def rotate_foa_augment(clip, rotation: FoaRotation):
    """Rotate a FoaClip's audio and labels together."""
    return clip.transformed(rotation)


def rotate_features(mel: np.ndarray, intensity: np.ndarray, rotation: FoaRotation) -> tuple[np.ndarray, np.ndarray]:
    """Feature-space counterpart of rotate_foa_augment on raw cached features."""
    if rotation.is_identity:
        return mel, intensity
    return rotation.apply_features(mel, intensity)

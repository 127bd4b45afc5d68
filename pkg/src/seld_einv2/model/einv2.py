"""
The EINV2 network.

Two convolutional encoders (SED on 4-channel log-mel, DoA on 7-channel
log-mel + intensity) are joined by cross-stitch units after every block but
the last, pooled over frequency, then split into per-track, per-task MHSA
stacks that are cross-stitched once more before the output heads.

    ps_mode   soft  two encoders + cross-stitch units
              none  two independent encoders
              hard  one encoder on the DoA input shared by both tasks
    format    trackwise  per track: FC -> K sigmoid, FC -> 3 tanh
              seldnet    per class: FC -> K sigmoid, FC -> 3K tanh
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, List, Optional, Union

import numpy as np

from seld_einv2.diffcore import ops
from seld_einv2.diffcore.nn import Module
from seld_einv2.diffcore.tensor import Tensor, no_grad
from seld_einv2.errors import ConfigError
from seld_einv2.model.attention import MhsaStack, positional_encoding
from seld_einv2.model.layers import ConvBlock, CrossStitch, Linear
from seld_einv2.run_config import ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class TrackPrediction:
    """Trackwise output of one segment."""
    sed: np.ndarray  # [T_out, M, K]
    doa: np.ndarray  # [T_out, M, 3]

    @property
    def n_frames(self) -> int:
        return self.sed.shape[0]


@dataclass
class SeldnetPrediction:
    """Class-wise output of one segment."""
    sed: np.ndarray  # [T_out, K]
    doa: np.ndarray  # [T_out, K, 3]

    @property
    def n_frames(self) -> int:
        return self.sed.shape[0]


Prediction = Union[TrackPrediction, SeldnetPrediction]


class Encoder(Module):
    def __init__(self, c_in: int, widths: List[int], pools, dtype: Any = None):
        super().__init__()
        self.blocks: List[ConvBlock] = []
        for width, pool in zip(widths, pools):
            self.blocks.append(ConvBlock(c_in, width, pool, dtype))
            c_in = width


class TaskHeads(Module):
    """MHSA stack per task, optional cross-stitch between them, then the output layers."""

    def __init__(self, config: ModelConfig, sed_out: int, doa_out: int, stitched: bool, dtype: Any = None):
        super().__init__()
        m = config.mhsa
        self.sed_mhsa = MhsaStack(m.model_dim, m.layers, m.heads, m.scaled_logits, m.residual_norm, dtype)
        self.doa_mhsa = MhsaStack(m.model_dim, m.layers, m.heads, m.scaled_logits, m.residual_norm, dtype)
        self.stitch = CrossStitch(m.model_dim, config.cross_stitch_init, dtype) if stitched else None
        self.sed_fc = Linear(m.model_dim, sed_out, dtype)
        self.doa_fc = Linear(m.model_dim, doa_out, dtype)

    def forward(self, x_sed: Tensor, x_doa: Tensor, p: Optional[np.ndarray]) -> tuple[Tensor, Tensor]:
        h_sed = self.sed_mhsa(x_sed, p)
        h_doa = self.doa_mhsa(x_doa, p)
        if self.stitch is not None:
            h_sed, h_doa = self.stitch(h_sed, h_doa, channel_axis=-1)
        return ops.sigmoid(self.sed_fc(h_sed)), ops.tanh(self.doa_fc(h_doa))


class EINV2(Module):
    """Event-independent SELD network with selectable parameter sharing and output format."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        dtype = np.dtype(config.dtype)
        self.dtype = dtype
        widths = config.scaled_widths
        if config.ps_mode == "hard":
            self.encoder = Encoder(config.doa_channels, widths, config.pools, dtype)
        else:
            self.sed_encoder = Encoder(config.sed_channels, widths, config.pools, dtype)
            self.doa_encoder = Encoder(config.doa_channels, widths, config.pools, dtype)
        self.stitches: List[CrossStitch] = []
        if config.ps_mode == "soft":
            self.stitches = [CrossStitch(w, config.cross_stitch_init, dtype) for w in widths[:-1]]

        stitched = config.ps_mode == "soft"
        k = config.n_classes
        if config.output_format == "trackwise":
            self.tracks: List[TaskHeads] = [
                TaskHeads(config, k, 3, stitched, dtype) for _ in range(config.n_tracks)
            ]
        else:
            self.tracks = [TaskHeads(config, k, 3 * k, stitched, dtype)]

    @property
    def trackwise(self) -> bool:
        return self.config.output_format == "trackwise"

    def set_keep_attention(self, keep: bool = True) -> None:
        for module in self.modules():
            if hasattr(module, "keep_attention"):
                module.keep_attention = keep
                module.last_attention = None

    def attention_maps(self) -> dict[str, np.ndarray]:
        """Attention matrices of the last forward, keyed by module path."""
        maps = {}
        for name, module in _named_modules(self):
            if getattr(module, "last_attention", None) is not None:
                maps[name] = module.last_attention
        return maps

    def check_inputs(self, sed: np.ndarray, doa: np.ndarray) -> None:
        c = self.config
        if sed.ndim != 4 or doa.ndim != 4:
            raise ConfigError(f"Model expects batched [B, C, T, F] inputs, got {sed.shape} and {doa.shape}")
        if sed.shape[1] != c.sed_channels or doa.shape[1] != c.doa_channels:
            raise ConfigError(
                f"Input channels {sed.shape[1]}/{doa.shape[1]} do not match the model's "
                f"{c.sed_channels}/{c.doa_channels}"
            )
        if sed.shape[0] != doa.shape[0] or sed.shape[2:] != doa.shape[2:]:
            raise ConfigError(f"SED and DoA inputs disagree: {sed.shape} vs {doa.shape}")
        t, f = sed.shape[2], sed.shape[3]
        if t % c.time_pooling or f % c.freq_pooling:
            raise ConfigError(
                f"Input [{t} frames, {f} bins] is not divisible by the pooling schedule "
                f"({c.time_pooling}, {c.freq_pooling})"
            )

    def encode(self, sed: Tensor, doa: Tensor) -> tuple[Tensor, Tensor]:
        """Conv trunk(s) and frequency pooling -> two [B, T_out, D] sequences."""
        if self.config.ps_mode == "hard":
            x = doa
            for block in self.encoder.blocks:
                x = block(x)
            x_sed = x_doa = x
        else:
            x_sed, x_doa = sed, doa
            n_blocks = len(self.sed_encoder.blocks)
            for i in range(n_blocks):
                x_sed = self.sed_encoder.blocks[i](x_sed)
                x_doa = self.doa_encoder.blocks[i](x_doa)
                if i < len(self.stitches):
                    x_sed, x_doa = self.stitches[i](x_sed, x_doa, channel_axis=1)
        pooled_sed = ops.transpose(ops.mean(x_sed, axis=3), (0, 2, 1))
        if x_doa is x_sed:
            return pooled_sed, pooled_sed
        return pooled_sed, ops.transpose(ops.mean(x_doa, axis=3), (0, 2, 1))

    def forward(self, sed, doa) -> tuple[Tensor, Tensor]:
        """
        Args:
            sed: [B, 4, T, F] standardised log-mel
            doa: [B, 7, T, F] log-mel + intensity

        Returns:
            trackwise: (sed [B, T/4, M, K], doa [B, T/4, M, 3])
            seldnet:   (sed [B, T/4, K], doa [B, T/4, K, 3])
        """
        sed_arr = sed.data if isinstance(sed, Tensor) else np.asarray(sed)
        doa_arr = doa.data if isinstance(doa, Tensor) else np.asarray(doa)
        self.check_inputs(sed_arr, doa_arr)
        sed_t = sed if isinstance(sed, Tensor) and sed.dtype == self.dtype else Tensor(sed_arr, dtype=self.dtype)
        doa_t = doa if isinstance(doa, Tensor) and doa.dtype == self.dtype else Tensor(doa_arr, dtype=self.dtype)

        x_sed, x_doa = self.encode(sed_t, doa_t)
        p = positional_encoding(x_sed.shape[1], x_sed.shape[2])
        outputs = [heads(x_sed, x_doa, p) for heads in self.tracks]
        if self.trackwise:
            return ops.stack([o[0] for o in outputs], axis=2), ops.stack([o[1] for o in outputs], axis=2)
        sed_out, doa_out = outputs[0]
        b, t, _ = doa_out.shape
        return sed_out, ops.reshape(doa_out, (b, t, self.config.n_classes, 3))


def _named_modules(module: Module, prefix: str = ""):
    yield prefix.rstrip("."), module
    for key, value in module._children():
        if isinstance(value, Module):
            yield from _named_modules(value, f"{prefix}{key}.")


def build_model(config: ModelConfig, seed: int = 0) -> EINV2:
    """Construct and initialise an EINV2 model (initial values depend only on seed and parameter name)."""
    model = EINV2(config).initialize(seed)
    logger.debug("EINV2 %s/%s with %d parameters", config.ps_mode, config.output_format, model.num_parameters())
    return model


def to_prediction(model: EINV2, sed: np.ndarray, doa: np.ndarray) -> List[Prediction]:
    """Split batched outputs into per-example prediction objects."""
    kind = TrackPrediction if model.trackwise else SeldnetPrediction
    return [kind(sed[b], doa[b]) for b in range(sed.shape[0])]


def predict_batch(model: EINV2, sed: np.ndarray, doa: np.ndarray) -> List[Prediction]:
    """Eval-mode forward without recording gradients."""
    with no_grad():
        sed_out, doa_out = model(sed, doa)
    return to_prediction(model, sed_out.data, doa_out.data)


def einv2_forward(model: EINV2, features) -> Prediction:
    """Forward one FeatureClip (unbatched) and return its prediction."""
    sed = np.asarray(features.sed_input)[None]
    doa = np.asarray(features.doa_input)[None]
    return predict_batch(model, sed, doa)[0]

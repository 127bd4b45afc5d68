"""Building blocks of the EINV2 network: affine maps, conv blocks, cross-stitch units."""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from seld_einv2.diffcore import ops
from seld_einv2.diffcore.nn import InitSpec, Module, Parameter
from seld_einv2.diffcore.tensor import Tensor, as_tensor
from seld_einv2.errors import DimensionError


class Linear(Module):
    """y = x @ weight + bias with weight [D_in, D_out]."""

    def __init__(self, d_in: int, d_out: int, dtype: Any = None):
        super().__init__()
        self.weight = Parameter((d_in, d_out), InitSpec("uniform_fan_in", fan_in=d_in), dtype)
        self.bias = Parameter((d_out,), InitSpec("zeros"), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, dtype: Any = None):
        super().__init__()
        self.weight = Parameter((c_out, c_in, 3, 3), InitSpec("uniform_fan_in", fan_in=c_in * 9), dtype)
        self.bias = Parameter((c_out,), InitSpec("zeros"), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias)


class BatchNorm2d(Module):
    """Per-channel batch normalisation with running statistics (mean 0 / var 1 until trained)."""

    def __init__(self, channels: int, dtype: Any = None):
        super().__init__()
        self.gamma = Parameter((channels,), InitSpec("ones"), dtype)
        self.beta = Parameter((channels,), InitSpec("zeros"), dtype)
        dtype = self.gamma.dtype
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.buffer("running_mean"),
                               self.buffer("running_var"), training=self.training)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype: Any = None):
        super().__init__()
        self.gamma = Parameter((dim,), InitSpec("ones"), dtype)
        self.beta = Parameter((dim,), InitSpec("zeros"), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class ConvBlock(Module):
    """(3x3 conv -> BN -> ReLU) x 2, then average pooling."""

    def __init__(self, c_in: int, width: int, pool: Sequence[int], dtype: Any = None):
        super().__init__()
        self.conv1 = Conv2d(c_in, width, dtype)
        self.bn1 = BatchNorm2d(width, dtype)
        self.conv2 = Conv2d(width, width, dtype)
        self.bn2 = BatchNorm2d(width, dtype)
        self.pool = tuple(int(p) for p in pool)
        self.width = width

    def forward(self, x: Tensor) -> Tensor:
        x = ops.relu(self.bn1(self.conv1(x)))
        x = ops.relu(self.bn2(self.conv2(x)))
        return ops.pool2d(x, self.pool, kind="avg")


def cross_stitch(x_sed, x_doa, alpha, channel_axis: int = 0) -> tuple[Tensor, Tensor]:
    """
    Per-channel 2x2 mixing of two branch feature maps

    x_sed_hat[c] = alpha[c,0,0] * x_sed[c] + alpha[c,0,1] * x_doa[c]
    x_doa_hat[c] = alpha[c,1,0] * x_sed[c] + alpha[c,1,1] * x_doa[c]

    Args:
        x_sed, x_doa: same-shaped maps; ``channel_axis`` indexes c
        alpha: [D_c, 2, 2]

    Returns:
        (x_sed_hat, x_doa_hat)
    """
    x_sed, x_doa, alpha = as_tensor(x_sed), as_tensor(x_doa), as_tensor(alpha)
    if x_sed.shape != x_doa.shape:
        raise DimensionError(f"cross_stitch branch shapes differ: {x_sed.shape} vs {x_doa.shape}")
    axis = channel_axis % x_sed.ndim
    channels = x_sed.shape[axis]
    if alpha.shape != (channels, 2, 2):
        raise DimensionError(f"cross_stitch alpha must be [{channels}, 2, 2], got {alpha.shape}")
    view = [1] * x_sed.ndim
    view[axis] = channels

    def coeff(i: int, j: int) -> Tensor:
        return ops.reshape(alpha[:, i, j], tuple(view))

    sed_hat = ops.add(ops.mul(coeff(0, 0), x_sed), ops.mul(coeff(0, 1), x_doa))
    doa_hat = ops.add(ops.mul(coeff(1, 0), x_sed), ops.mul(coeff(1, 1), x_doa))
    return sed_hat, doa_hat


class CrossStitch(Module):
    """Learnable cross-stitch unit with one 2x2 matrix per channel."""

    def __init__(self, channels: int, init: Sequence[float] = (0.9, 0.1), dtype: Any = None):
        super().__init__()
        self.alpha = Parameter(
            (channels, 2, 2), InitSpec("cross_stitch", self_weight=float(init[0]), other_weight=float(init[1])), dtype
        )

    def forward(self, x_sed: Tensor, x_doa: Tensor, channel_axis: int = 1) -> tuple[Tensor, Tensor]:
        return cross_stitch(x_sed, x_doa, self.alpha, channel_axis)

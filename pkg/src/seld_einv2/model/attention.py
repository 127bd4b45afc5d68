"""
Self-attention used for track separation.

The attention logits are built from the position-augmented input while the
value path sees the raw input; logits are unscaled unless ``scaled_logits``
is set.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Any, List, Optional

import numpy as np

from seld_einv2.diffcore import ops
from seld_einv2.diffcore.nn import InitSpec, Module, Parameter
from seld_einv2.diffcore.tensor import Tensor, as_tensor
from seld_einv2.errors import ConfigError, DimensionError
from seld_einv2.model.layers import LayerNorm

PE_SCALE = 0.1
PE_BASE = 10.0
PE_EXPONENT = 8.0


@lru_cache(maxsize=32)
def _positional_table(n_frames: int, dim: int) -> np.ndarray:
    t = np.arange(n_frames, dtype=np.float64)[:, None]
    i = np.arange((dim + 1) // 2, dtype=np.float64)[None, :]
    angle = t / PE_BASE ** (PE_EXPONENT * i / dim)
    table = np.zeros((n_frames, dim))
    table[:, 0::2] = PE_SCALE * np.sin(angle)
    table[:, 1::2] = PE_SCALE * np.cos(angle[:, : dim // 2])
    table.setflags(write=False)
    return table


def positional_encoding(n_frames: int, dim: int) -> np.ndarray:
    """P[t, 2i] = 0.1 sin(t / 10^(8i/D)), P[t, 2i+1] = 0.1 cos(t / 10^(8i/D)), t from 0."""
    return _positional_table(int(n_frames), int(dim))


def self_attention(x, p, w_qry, w_key, w_val, scaled_logits: bool = False,
                   return_attention: bool = False):
    """
    Single-head self-attention on [..., T, D_in]

    logits = (X + P) W_qry W_key^T (X + P)^T, attention = softmax(logits),
    output = attention X W_val.

    Returns:
        output [..., T, D_out], plus the attention matrix when requested
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"self_attention expects [..., T, D], got {x.shape}")
    for name, w in (("w_qry", w_qry), ("w_key", w_key), ("w_val", w_val)):
        if as_tensor(w).shape[0] != x.shape[-1]:
            raise DimensionError(f"{name} expects input dim {as_tensor(w).shape[0]}, got {x.shape}")
    xp = x if p is None else ops.add(x, as_tensor(p, like=x))
    q = ops.matmul(xp, w_qry)
    k = ops.matmul(xp, w_key)
    logits = ops.matmul(q, ops.transpose(k, _swap_last(k.ndim)))
    if scaled_logits:
        logits = ops.div(logits, math.sqrt(q.shape[-1]))
    attention = ops.softmax_lastdim(logits)
    out = ops.matmul(attention, ops.matmul(x, w_val))
    return (out, attention) if return_attention else out


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadSelfAttention(Module):
    """
    N_h heads on evenly split projections, concatenated and projected by
    W_out / b_out, with an optional residual connection and layer norm.
    """

    def __init__(self, d_in: int, d_out: int, heads: int, scaled_logits: bool = False,
                 residual_norm: bool = True, dtype: Any = None):
        super().__init__()
        if d_out % heads:
            raise ConfigError(f"MHSA width {d_out} is not divisible by {heads} heads")
        if residual_norm and d_in != d_out:
            raise ConfigError(f"Residual MHSA needs d_in == d_out, got {d_in} and {d_out}")
        self.heads = heads
        self.d_out = d_out
        self.scaled_logits = scaled_logits
        self.residual_norm = residual_norm
        self.keep_attention = False
        self.last_attention: Optional[np.ndarray] = None
        self.w_qry = Parameter((d_in, d_out), InitSpec("uniform_fan_in", fan_in=d_in), dtype)
        self.w_key = Parameter((d_in, d_out), InitSpec("uniform_fan_in", fan_in=d_in), dtype)
        self.w_val = Parameter((d_in, d_out), InitSpec("uniform_fan_in", fan_in=d_in), dtype)
        self.w_out = Parameter((d_out, d_out), InitSpec("uniform_fan_in", fan_in=d_out), dtype)
        self.b_out = Parameter((d_out,), InitSpec("zeros"), dtype)
        self.norm = LayerNorm(d_out, dtype) if residual_norm else None

    def _split(self, t: Tensor) -> Tensor:
        # [..., T, D] -> [..., H, T, D/H]
        *lead, n, d = t.shape
        t = ops.reshape(t, tuple(lead) + (n, self.heads, d // self.heads))
        nd = t.ndim
        axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
        return ops.transpose(t, axes)

    def _merge(self, t: Tensor) -> Tensor:
        *lead, h, n, dh = t.shape
        nd = t.ndim
        axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
        return ops.reshape(ops.transpose(t, axes), tuple(lead) + (n, h * dh))

    def forward(self, x, p=None) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.w_qry.shape[0]:
            raise DimensionError(f"MHSA expects input dim {self.w_qry.shape[0]}, got {x.shape}")
        xp = x if p is None else ops.add(x, as_tensor(p, like=x))
        q = self._split(ops.matmul(xp, self.w_qry))
        k = self._split(ops.matmul(xp, self.w_key))
        v = self._split(ops.matmul(x, self.w_val))
        logits = ops.matmul(q, ops.transpose(k, _swap_last(k.ndim)))
        if self.scaled_logits:
            logits = ops.div(logits, math.sqrt(q.shape[-1]))
        attention = ops.softmax_lastdim(logits)
        if self.keep_attention:
            self.last_attention = attention.data.copy()
        out = ops.linear(self._merge(ops.matmul(attention, v)), self.w_out, self.b_out)
        if self.residual_norm:
            out = self.norm(ops.add(x, out))
        return out


class MhsaStack(Module):
    """Stacked MHSA layers; the positional encoding enters every layer's query/key path."""

    def __init__(self, dim: int, layers: int, heads: int, scaled_logits: bool = False,
                 residual_norm: bool = True, dtype: Any = None):
        super().__init__()
        self.layers: List[MultiHeadSelfAttention] = [
            MultiHeadSelfAttention(dim, dim, heads, scaled_logits, residual_norm, dtype) for _ in range(layers)
        ]

    def forward(self, x, p=None) -> Tensor:
        for layer in self.layers:
            x = layer(x, p)
        return x

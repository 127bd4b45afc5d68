"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from seld_einv2.diffcore.tensor import Tensor
from seld_einv2.errors import ContractError

DEFAULT_STEP = 1e-5


def _scalar(value: Tensor) -> float:
    if not isinstance(value, Tensor) or value.size != 1:
        shape = value.shape if isinstance(value, Tensor) else type(value).__name__
        raise ContractError(f"grad_check needs a scalar-valued function, got {shape}")
    return float(value.data.reshape(-1)[0])


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = DEFAULT_STEP,
    n_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare the backward pass of ``f`` at ``x`` with central differences.

    ``x`` is perturbed in place, so it may be a parameter that ``f`` reaches
    through a closure. With ``n_coords`` only a random subset of coordinates
    is checked.

    Returns:
        max over checked coordinates of
        |analytic - numeric| / max(1, |analytic|, |numeric|)
    """
    if x.dtype != np.float64:
        raise ContractError(f"grad_check runs in double precision, got {x.dtype}")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    _scalar(out)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    coords = np.arange(flat.size)
    if n_coords is not None and n_coords < flat.size:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(flat.size, size=n_coords, replace=False)

    worst = 0.0
    for idx in coords:
        original = flat[idx]
        flat[idx] = original + h
        plus = _scalar(f(x))
        flat[idx] = original - h
        minus = _scalar(f(x))
        flat[idx] = original
        numeric = (plus - minus) / (2.0 * h)
        a = float(analytic.reshape(-1)[idx])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst

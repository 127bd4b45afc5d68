"""
Finite-difference gradient suite.

Every differentiable primitive is checked on several random inputs over all
of its coordinates; the cross-stitch unit, one MHSA layer, the PIT loss and
the loss of a complete tiny EINV2 are checked on sampled coordinates. All
checks run in double precision. Smooth primitives must agree to
SMOOTH_TOLERANCE, everything else to TOLERANCE. Checks through ReLU,
max-pooling or clamping are retried on fresh random inputs when a coordinate
lands on a kink.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from seld_einv2.data.labels import FrameLabels, LabelRow
from seld_einv2.diffcore import ops
from seld_einv2.diffcore.gradcheck import grad_check
from seld_einv2.diffcore.tensor import Tensor
from seld_einv2.losses import tpit_loss
from seld_einv2.model.attention import MultiHeadSelfAttention, positional_encoding
from seld_einv2.model.einv2 import build_model
from seld_einv2.model.layers import cross_stitch
from seld_einv2.run_config import MhsaConfig, ModelConfig

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
SMOOTH_TOLERANCE = 1e-6
N_INPUTS = 5
KINK_RETRIES = 3
KINK_MARGIN = 0.05


@dataclass
class GradResult:
    name: str
    error: float
    attempts: int = 1
    tolerance: float = TOLERANCE
    n_inputs: int = 1

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _t(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)


def _weighted(op: Callable[..., Tensor], weights: np.ndarray) -> Callable[..., Tensor]:
    # random projection so every output element reaches the scalar
    return lambda *args: ops.sum(ops.mul(op(*args), weights))


def _draw(rng, shape, positive: bool, kinks) -> np.ndarray:
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    for kink in kinks:
        near = np.abs(data - kink) < KINK_MARGIN
        data = np.where(near, kink + KINK_MARGIN * np.where(data >= kink, 1.0, -1.0), data)
    return data


def _check_primitive(rng, name: str, op: Callable[[Tensor], Tensor], shape,
                     positive: bool = False, kinks=(), smooth: bool = True,
                     n_inputs: int = N_INPUTS) -> GradResult:
    """Worst error over ``n_inputs`` random inputs, every coordinate checked."""
    tolerance = SMOOTH_TOLERANCE if smooth else TOLERANCE
    worst, attempts = 0.0, 0
    for _ in range(n_inputs):
        best = None
        for _ in range(1 if smooth else KINK_RETRIES):
            attempts += 1
            data = _draw(rng, shape, positive, kinks)
            x = Tensor(data, dtype=np.float64)
            out_shape = op(Tensor(data.copy(), dtype=np.float64)).shape
            f = _weighted(op, rng.standard_normal(out_shape))
            error = grad_check(f, x)
            best = error if best is None else min(best, error)
            if best < tolerance:
                break
            logger.debug("Gradient check of %s hit a kink (error %.3e); resampling", name, error)
        worst = max(worst, best)
    return GradResult(name, worst, attempts, tolerance, n_inputs)


def primitive_checks(rng: np.random.Generator, n_inputs: int = N_INPUTS) -> List[GradResult]:
    other = _t(rng, 3, 4)
    positive_other = Tensor(np.abs(rng.standard_normal((3, 4))) + 0.5, dtype=np.float64)
    w = _t(rng, 4, 5)
    b = _t(rng, 5)
    conv_w = _t(rng, 3, 2, 3, 3, scale=0.5)
    conv_b = _t(rng, 3)
    gamma, beta = _t(rng, 2), _t(rng, 2)
    ln_gamma, ln_beta = _t(rng, 6), _t(rng, 6)

    checks = [
        ("add", lambda x: ops.add(x, other), (3, 4), {}),
        ("sub", lambda x: ops.sub(other, x), (3, 4), {}),
        ("mul", lambda x: ops.mul(x, other), (3, 4), {}),
        ("div", lambda x: ops.div(x, positive_other), (3, 4), {}),
        ("div_denominator", lambda x: ops.div(other, x), (3, 4), {"positive": True}),
        ("power", lambda x: ops.power(x, 3.0), (3, 4), {}),
        ("exp", ops.exp, (3, 4), {}),
        ("log", ops.log, (3, 4), {"positive": True}),
        ("sqrt", ops.sqrt, (3, 4), {"positive": True}),
        ("clamp", lambda x: ops.clamp(x, -0.5, 0.5), (3, 4), {"kinks": (-0.5, 0.5), "smooth": False}),
        ("sum", lambda x: ops.sum(x, axis=1), (3, 4), {}),
        ("mean", lambda x: ops.mean(x, axis=0), (3, 4), {}),
        ("reshape", lambda x: ops.reshape(x, (2, 6)), (3, 4), {}),
        ("transpose", lambda x: ops.transpose(x, (1, 0)), (3, 4), {}),
        ("getitem", lambda x: x[1:, ::2], (3, 4), {}),
        ("concat", lambda x: ops.concat([x, other], axis=1), (3, 4), {}),
        ("stack", lambda x: ops.stack([x, other], axis=0), (3, 4), {}),
        ("matmul", lambda x: ops.matmul(x, w), (3, 4), {}),
        ("linear", lambda x: ops.linear(x, w, b), (3, 4), {}),
        ("conv2d", lambda x: ops.conv2d(x, conv_w, conv_b), (2, 2, 5, 6), {}),
        ("batchnorm2d", lambda x: ops.batchnorm2d(x, gamma, beta, np.zeros(2), np.ones(2), training=True),
         (3, 2, 4, 4), {}),
        ("avg_pool2d", lambda x: ops.pool2d(x, (2, 2), kind="avg"), (1, 2, 4, 4), {}),
        ("max_pool2d", lambda x: ops.pool2d(x, (2, 2), kind="max"), (1, 2, 4, 4), {"smooth": False}),
        ("relu", ops.relu, (3, 4), {"kinks": (0.0,), "smooth": False}),
        ("sigmoid", ops.sigmoid, (3, 4), {}),
        ("tanh", ops.tanh, (3, 4), {}),
        ("softmax", ops.softmax_lastdim, (3, 4), {}),
        ("layer_norm", lambda x: ops.layer_norm(x, ln_gamma, ln_beta), (4, 6), {}),
    ]
    return [_check_primitive(rng, name, op, shape, n_inputs=n_inputs, **kw) for name, op, shape, kw in checks]


def cross_stitch_check(rng: np.random.Generator, n_coords: Optional[int] = 12) -> List[GradResult]:
    x_sed, x_doa = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
    alpha = _t(rng, 3, 2, 2)
    w1, w2 = rng.standard_normal(x_sed.shape), rng.standard_normal(x_sed.shape)

    def f(_):
        a, b = cross_stitch(x_sed, x_doa, alpha, channel_axis=1)
        return ops.add(ops.sum(ops.mul(a, w1)), ops.sum(ops.mul(b, w2)))

    return [GradResult("cross_stitch.alpha", grad_check(f, alpha, n_coords=n_coords, rng=rng)),
            GradResult("cross_stitch.input", grad_check(f, x_sed, n_coords=n_coords, rng=rng))]


def mhsa_check(rng: np.random.Generator, n_coords: Optional[int] = 12) -> List[GradResult]:
    layer = MultiHeadSelfAttention(8, 8, 2, dtype=np.float64).initialize(int(rng.integers(1 << 30)))
    x = _t(rng, 2, 5, 8)
    p = positional_encoding(5, 8)
    weights = rng.standard_normal((2, 5, 8))
    f = lambda _: ops.sum(ops.mul(layer(x, p), weights))
    results = [GradResult("mhsa.input", grad_check(f, x, n_coords=n_coords, rng=rng))]
    for name in ("w_qry", "w_key", "w_val", "w_out"):
        results.append(GradResult(f"mhsa.{name}", grad_check(f, getattr(layer, name), n_coords=n_coords, rng=rng)))
    return results


def _random_labels(rng: np.random.Generator, n_frames: int, n_tracks: int, n_classes: int) -> FrameLabels:
    rows = []
    for t in range(n_frames):
        for m in range(n_tracks):
            if rng.random() < 0.6:
                rows.append(LabelRow(frame=t, class_index=int(rng.integers(n_classes)), track=m,
                                     azimuth=float(rng.integers(-180, 180)), elevation=float(rng.integers(-45, 46))))
    return FrameLabels.from_rows(rows, n_frames, n_tracks)


def tpit_check(rng: np.random.Generator, n_coords: Optional[int] = 12) -> List[GradResult]:
    labels = _random_labels(rng, 4, 2, 5)
    sed = Tensor(rng.uniform(0.05, 0.95, (4, 2, 5)), dtype=np.float64)
    doa = Tensor(rng.uniform(-0.9, 0.9, (4, 2, 3)), dtype=np.float64)
    f = lambda _: tpit_loss(sed, doa, labels)
    return [GradResult("tpit.sed", grad_check(f, sed, n_coords=n_coords, rng=rng)),
            GradResult("tpit.doa", grad_check(f, doa, n_coords=n_coords, rng=rng))]


def tiny_model_config(**updates) -> ModelConfig:
    """Smallest configuration of the full network (widths / 8, D = 64, two heads)."""
    base = dict(width_divisor=8, mhsa=MhsaConfig(layers=2, heads=2, model_dim=64), dtype="float64")
    base.update(updates)
    return ModelConfig(**base)


def model_check(rng: np.random.Generator, n_coords: Optional[int] = 6, ps_mode: str = "soft") -> List[GradResult]:
    config = tiny_model_config(ps_mode=ps_mode)
    results = []
    for attempt in range(1, KINK_RETRIES + 1):
        model = build_model(config, seed=int(rng.integers(1 << 30))).train()
        sed_in = rng.standard_normal((2, 4, 8, 16))
        doa_in = rng.standard_normal((2, 7, 8, 16))
        labels = [_random_labels(rng, 2, config.n_tracks, config.n_classes) for _ in range(2)]

        def f(_):
            sed, doa = model(sed_in, doa_in)
            return tpit_loss(sed, doa, labels)

        params = dict(model.named_parameters())
        names = [n for n in params if n.endswith("conv1.weight")][:1]
        names += [n for n in params if n.startswith("stitches.0")][:1]
        names += [n for n in params if n.endswith("sed_mhsa.layers.0.w_qry")][:1]
        names += [n for n in params if n.endswith("doa_fc.weight")][:1]
        results = [GradResult(f"einv2.{n}", grad_check(f, params[n], n_coords=n_coords, rng=rng), attempt)
                   for n in names]
        if all(r.passed for r in results):
            break
        logger.debug("Model gradient check attempt %d hit a kink; resampling", attempt)
    return results


def run_grad_suite(seed: int = 0, n_coords: Optional[int] = 12) -> List[GradResult]:
    """Run every check; ``n_coords`` limits the coordinates sampled by the component checks."""
    rng = np.random.default_rng(seed)
    results = primitive_checks(rng)
    results += cross_stitch_check(rng, n_coords)
    results += mhsa_check(rng, n_coords)
    results += tpit_check(rng, n_coords)
    results += model_check(rng, max(1, (n_coords or 12) // 2))
    return results


def format_grad_results(results: List[GradResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'inputs':>6}  {'max rel error':>14}  {'tolerance':>9}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.n_inputs:>6}  {r.error:>14.3e}  {r.tolerance:>9.0e}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)

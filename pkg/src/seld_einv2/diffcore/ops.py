"""
Differentiable primitives.

Only the operations the EINV2 network, its losses and the gradient suite need
are provided. Every op accepts Tensors or array-likes and returns a Tensor in
the element type of its tensor inputs.
"""

from __future__ import annotations

from typing import Any, Optional, Sequence

import numpy as np

from seld_einv2.diffcore.tensor import Function, Tensor, as_tensor, unbroadcast
from seld_einv2.errors import DimensionError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

class Add(Function):
    name = "add"

    def forward(self, a, b):
        self.saved["shapes"] = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.saved["shapes"]
        return unbroadcast(grad, sa), unbroadcast(grad, sb)


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        self.saved["shapes"] = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        sa, sb = self.saved["shapes"]
        return unbroadcast(grad, sa), unbroadcast(-grad, sb)


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        self.saved["a"], self.saved["b"] = a, b
        return a * b

    def backward(self, grad):
        a, b = self.saved["a"], self.saved["b"]
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class Div(Function):
    name = "div"

    def forward(self, a, b):
        self.saved["a"], self.saved["b"] = a, b
        return a / b

    def backward(self, grad):
        a, b = self.saved["a"], self.saved["b"]
        return unbroadcast(grad / b, a.shape), unbroadcast(-grad * a / (b * b), b.shape)


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Power(Function):
    name = "power"

    def forward(self, a, exponent: float = 2.0):
        self.saved["a"], self.saved["p"] = a, exponent
        return a ** exponent

    def backward(self, grad):
        a, p = self.saved["a"], self.saved["p"]
        return (grad * p * a ** (p - 1),)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        out = np.exp(a)
        self.saved["out"] = out
        return out

    def backward(self, grad):
        return (grad * self.saved["out"],)


class Log(Function):
    name = "log"

    def forward(self, a):
        self.saved["a"] = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.saved["a"],)


class Clamp(Function):
    name = "clamp"

    def forward(self, a, lo: float = -np.inf, hi: float = np.inf):
        self.saved["mask"] = (a >= lo) & (a <= hi)
        return np.clip(a, lo, hi)

    def backward(self, grad):
        return (grad * self.saved["mask"],)


def add(a, b) -> Tensor: return Add.apply(a, b)
def sub(a, b) -> Tensor: return Sub.apply(a, b)
def mul(a, b) -> Tensor: return Mul.apply(a, b)
def div(a, b) -> Tensor: return Div.apply(a, b)
def neg(a) -> Tensor: return Neg.apply(a)
def power(a, exponent: float) -> Tensor: return Power.apply(a, exponent=float(exponent))
def exp(a) -> Tensor: return Exp.apply(a)
def log(a) -> Tensor: return Log.apply(a)
def sqrt(a) -> Tensor: return Power.apply(a, exponent=0.5)


def clamp(a, lo: float = -np.inf, hi: float = np.inf) -> Tensor:
    """Clip values; the gradient is zero where clipping was active."""
    return Clamp.apply(a, lo=lo, hi=hi)


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------

class Sum(Function):
    name = "sum"

    def forward(self, a, axis=None, keepdims: bool = False):
        self.saved["shape"], self.saved["axis"], self.saved["keepdims"] = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        shape, axis, keepdims = self.saved["shape"], self.saved["axis"], self.saved["keepdims"]
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % len(shape) for ax in axes)
            for ax in sorted(axes):
                grad = np.expand_dims(grad, ax)
        return (np.broadcast_to(grad, shape).copy(),)


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape=()):
        self.saved["shape"] = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.saved["shape"]),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a, axes=None):
        axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(ax % a.ndim for ax in axes)
        self.saved["axes"] = axes
        return np.transpose(a, axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.saved["axes"])),)


class GetItem(Function):
    name = "getitem"

    def forward(self, a, index=None):
        self.saved["shape"], self.saved["index"], self.saved["dtype"] = a.shape, index, a.dtype
        return np.array(a[index])

    def backward(self, grad):
        out = np.zeros(self.saved["shape"], dtype=self.saved["dtype"])
        np.add.at(out, self.saved["index"], grad)
        return (out,)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis: int = 0):
        self.saved["axis"] = axis
        self.saved["sizes"] = [arr.shape[axis] for arr in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        bounds = np.cumsum(self.saved["sizes"])[:-1]
        return tuple(np.split(grad, bounds, axis=self.saved["axis"]))


class Stack(Function):
    name = "stack"

    def forward(self, *arrays, axis: int = 0):
        self.saved["axis"] = axis
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        axis = self.saved["axis"]
        return tuple(np.moveaxis(grad, axis, 0))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return div(Sum.apply(a, axis=axis, keepdims=keepdims), float(count))


def reshape(a, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def getitem(a, index) -> Tensor:
    return GetItem.apply(a, index=index)


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise DimensionError(f"matmul batch dimensions not broadcastable: {a.shape} @ {b.shape}")
        self.saved["a"], self.saved["b"] = a, b
        return a @ b

    def backward(self, grad):
        a, b = self.saved["a"], self.saved["b"]
        ga = grad @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ grad
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two dimensions."""
    return MatMul.apply(a, b)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight + bias`` on the last dimension; weight is [D_in, D_out]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear expects input dim {weight.shape[0]}, got shape {x.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.shape[0]))
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    if squeeze:
        out = reshape(out, (weight.shape[1],))
    return out


# ---------------------------------------------------------------------------
# Convolution, normalisation, pooling
# ---------------------------------------------------------------------------

class Conv2d(Function):
    """3x3 cross-correlation, stride 1, zero padding 1, on [N, C, T, F]."""

    name = "conv2d"

    def forward(self, x, w, b):
        n, c, t, f = x.shape
        o = w.shape[0]
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.zeros((n, o, t, f), dtype=np.result_type(x, w))
        for i in range(3):
            for j in range(3):
                patch = xp[:, :, i:i + t, j:j + f]
                out += np.einsum("oc,nctf->notf", w[:, :, i, j], patch, optimize=True)
        out += b.reshape(1, o, 1, 1)
        self.saved["xp"], self.saved["w"] = xp, w
        return out

    def backward(self, grad):
        xp, w = self.saved["xp"], self.saved["w"]
        n, o, t, f = grad.shape
        gw = np.zeros_like(w)
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                patch = xp[:, :, i:i + t, j:j + f]
                gw[:, :, i, j] = np.einsum("notf,nctf->oc", grad, patch, optimize=True)
                gxp[:, :, i:i + t, j:j + f] += np.einsum("oc,notf->nctf", w[:, :, i, j], grad, optimize=True)
        gb = grad.sum(axis=(0, 2, 3))
        return gxp[:, :, 1:-1, 1:-1], gw, gb


def conv2d(x, w, b) -> Tensor:
    """Same-size 3x3 convolution of x [C_in, T, F] or [N, C_in, T, F] with w [C_out, C_in, 3, 3]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d expects a [C_out, C_in, 3, 3] kernel, got {w.shape}")
    if x.ndim not in (3, 4) or x.shape[-3] != w.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"conv2d bias must be [{w.shape[0]}], got {b.shape}")
    if x.ndim == 3:
        return reshape(Conv2d.apply(reshape(x, (1,) + x.shape), w, b), (w.shape[0],) + x.shape[1:])
    return Conv2d.apply(x, w, b)


class BatchNormTrain(Function):
    name = "batchnorm2d"

    def forward(self, x, gamma, beta, eps: float = BN_EPS):
        axes = (0, 2, 3)
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv_std
        self.saved.update(xhat=xhat, inv_std=inv_std, gamma=gamma, mean=mu.reshape(-1), var=var.reshape(-1))
        return gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)

    def backward(self, grad):
        xhat, inv_std, gamma = self.saved["xhat"], self.saved["inv_std"], self.saved["gamma"]
        axes = (0, 2, 3)
        count = grad.size // grad.shape[1]
        gbeta = grad.sum(axis=axes)
        ggamma = (grad * xhat).sum(axis=axes)
        gxhat = grad * gamma.reshape(1, -1, 1, 1)
        gx = (inv_std / count) * (
            count * gxhat
            - gxhat.sum(axis=axes, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return gx, ggamma, gbeta


class BatchNormEval(Function):
    name = "batchnorm2d_eval"

    def forward(self, x, gamma, beta, running_mean, running_var, eps: float = BN_EPS):
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        self.saved.update(xhat=xhat, inv_std=inv_std, gamma=gamma)
        return gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)

    def backward(self, grad):
        xhat, inv_std, gamma = self.saved["xhat"], self.saved["inv_std"], self.saved["gamma"]
        gx = grad * (gamma * inv_std).reshape(1, -1, 1, 1)
        return gx, (grad * xhat).sum(axis=(0, 2, 3)), grad.sum(axis=(0, 2, 3)), None, None


def batchnorm2d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Batch normalisation over (N, T, F) per channel.

    In training mode batch statistics are used and the running statistics
    (updated in place) follow ``(1 - momentum) * old + momentum * batch``,
    with the unbiased batch variance. In eval mode the running statistics are
    used; fresh running stats are mean 0 / var 1.
    """
    x = as_tensor(x)
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[1] != as_tensor(gamma).shape[0]:
        raise DimensionError(f"batchnorm2d channel mismatch: input {x.shape}, gamma {as_tensor(gamma).shape}")
    if training:
        out = BatchNormTrain.apply(x, gamma, beta, eps=eps)
        record_fn = out._record.fn if out._record is not None else None
        n = x.size // x.shape[1]
        axes = (0, 2, 3)
        batch_mean = record_fn.saved["mean"] if record_fn else x.data.mean(axis=axes)
        batch_var = record_fn.saved["var"] if record_fn else x.data.var(axis=axes)
        unbiased = batch_var * (n / max(n - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * batch_mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        out = BatchNormEval.apply(x, gamma, beta, running_mean, running_var, eps=eps)
    if unbatched:
        out = reshape(out, out.shape[1:])
    return out


class Pool2d(Function):
    name = "pool2d"

    def forward(self, x, window=(2, 2), kind: str = "avg"):
        pt, pf = window
        *lead, t, f = x.shape
        blocks = x.reshape(*lead, t // pt, pt, f // pf, pf)
        blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, t // pt, f // pf, pt * pf)
        self.saved.update(shape=x.shape, window=window, kind=kind)
        if kind == "avg":
            return blocks.mean(axis=-1)
        arg = blocks.argmax(axis=-1)
        self.saved["arg"] = arg
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        shape, (pt, pf), kind = self.saved["shape"], self.saved["window"], self.saved["kind"]
        *lead, t, f = shape
        if kind == "avg":
            blocks = np.repeat(grad[..., None], pt * pf, axis=-1) / (pt * pf)
        else:
            blocks = np.zeros(grad.shape + (pt * pf,), dtype=grad.dtype)
            np.put_along_axis(blocks, self.saved["arg"][..., None], grad[..., None], axis=-1)
        blocks = blocks.reshape(*lead, t // pt, f // pf, pt, pf)
        return (np.moveaxis(blocks, -2, -3).reshape(shape),)


def pool2d(x, window: Sequence[int] = (2, 2), kind: str = "avg") -> Tensor:
    """Non-overlapping pooling over the last two axes."""
    x = as_tensor(x)
    pt, pf = int(window[0]), int(window[1])
    t, f = x.shape[-2], x.shape[-1]
    if t % pt or f % pf:
        raise DimensionError(f"pool2d window ({pt}, {pf}) does not divide spatial dims ({t}, {f})")
    if kind not in ("avg", "max"):
        raise DimensionError(f"Unknown pooling kind: {kind}")
    return Pool2d.apply(x, window=(pt, pf), kind=kind)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

class Relu(Function):
    name = "relu"

    def forward(self, a):
        self.saved["mask"] = a > 0
        return np.where(a > 0, a, 0).astype(a.dtype)

    def backward(self, grad):
        return (grad * self.saved["mask"],)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        self.saved["out"] = out
        return out

    def backward(self, grad):
        out = self.saved["out"]
        return (grad * out * (1.0 - out),)


class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        out = np.tanh(a)
        self.saved["out"] = out
        return out

    def backward(self, grad):
        out = self.saved["out"]
        return (grad * (1.0 - out * out),)


class Softmax(Function):
    name = "softmax"

    def forward(self, a):
        shifted = a - a.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        self.saved["out"] = out
        return out

    def backward(self, grad):
        out = self.saved["out"]
        return (out * (grad - (grad * out).sum(axis=-1, keepdims=True)),)


def relu(a) -> Tensor: return Relu.apply(a)
def sigmoid(a) -> Tensor: return Sigmoid.apply(a)
def tanh(a) -> Tensor: return Tanh.apply(a)


def softmax_lastdim(a) -> Tensor:
    """Softmax over the final dimension with max subtraction."""
    return Softmax.apply(a)


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise the last dimension to zero mean / unit variance, then scale and shift."""
    x = as_tensor(x)
    centered = sub(x, mean(x, axis=-1, keepdims=True))
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    out = div(centered, sqrt(add(var, eps)))
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out

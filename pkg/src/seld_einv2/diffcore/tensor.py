"""
Reverse-mode differentiable tensor.

A Tensor wraps a numpy array. Operations are implemented as Function
subclasses; applying one to tensors that require gradients appends a Record
to the graph. Tensor.backward() orders those records into a Tape and replays
it in reverse, accumulating gradients into every reachable tensor.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from seld_einv2.errors import ContractError

_state = threading.local()
_default_dtype = np.dtype(np.float32)


def set_default_dtype(dtype: Any) -> None:
    """Set the element type used when tensors are built from python data."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"Unsupported tensor dtype: {dtype}")
    _default_dtype = dtype


def get_default_dtype() -> np.dtype:
    return _default_dtype


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """n-dimensional array with an optional gradient record."""

    __array_priority__ = 100.0

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(_default_dtype)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._record: Optional[Record] = None

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff ---------------------------------------------------------

    def backward(self, grad: Optional[np.ndarray] = None) -> "Tape":
        """Populate .grad on every tensor that contributed to this one.

        Returns the tape that was replayed so callers can inspect it.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() without a seed gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        tape = Tape.from_output(self)
        tape.backward(self, np.asarray(grad, dtype=self.dtype))
        return tape

    # -- operator sugar (implementations live in ops) ---------------------

    def __add__(self, other): return _ops().add(self, other)
    def __radd__(self, other): return _ops().add(other, self)
    def __sub__(self, other): return _ops().sub(self, other)
    def __rsub__(self, other): return _ops().sub(other, self)
    def __mul__(self, other): return _ops().mul(self, other)
    def __rmul__(self, other): return _ops().mul(other, self)
    def __truediv__(self, other): return _ops().div(self, other)
    def __rtruediv__(self, other): return _ops().div(other, self)
    def __neg__(self): return _ops().neg(self)
    def __pow__(self, exponent: float): return _ops().power(self, exponent)
    def __matmul__(self, other): return _ops().matmul(self, other)
    def __getitem__(self, index): return _ops().getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False): return _ops().sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return _ops().mean(self, axis, keepdims)
    def reshape(self, *shape): return _ops().reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return _ops().transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else (axes or None))


def _ops():
    from seld_einv2.diffcore import ops
    return ops


def as_tensor(value: Any, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants so they can take part in an operation."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


@dataclass(eq=False)
class Record:
    """One recorded operation: which function produced which tensor from which inputs."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    fn: "Function"

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(id(t) for t in self.inputs)

    @property
    def output_id(self) -> int:
        return id(self.output)

    @property
    def saved(self) -> dict[str, Any]:
        return self.fn.saved


@dataclass
class Tape:
    """Records reachable from an output, in topological (forward) order."""

    records: list[Record] = field(default_factory=list)
    visits: int = 0

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order: list[Record] = []
        seen: set[int] = set()
        if output._record is None:
            return cls(order)
        stack: list[tuple[Record, bool]] = [(output._record, False)]
        while stack:
            record, expanded = stack.pop()
            if expanded:
                order.append(record)
                continue
            if id(record) in seen:
                continue
            seen.add(id(record))
            stack.append((record, True))
            for parent in record.inputs:
                if parent._record is not None and id(parent._record) not in seen:
                    stack.append((parent._record, False))
        return cls(order)

    def backward(self, output: Tensor, grad: np.ndarray) -> None:
        output.grad = grad if output.grad is None else output.grad + grad
        for record in reversed(self.records):
            self.visits += 1
            out_grad = record.output.grad
            if out_grad is None:
                continue
            input_grads = record.fn.backward(out_grad)
            for tensor, g in zip(record.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                g = np.asarray(g, dtype=tensor.dtype)
                if g.shape != tensor.shape:
                    g = unbroadcast(g, tensor.shape)
                tensor.grad = g if tensor.grad is None else tensor.grad + g


def unbroadcast(grad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    shape = tuple(shape)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Function:
    """Base class of differentiable operations.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning
    one gradient (or None) per tensor input. Intermediates needed by
    ``backward`` go into ``self.saved``.
    """

    name = "function"

    def __init__(self) -> None:
        self.saved: dict[str, Any] = {}

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> Tensor:
        like = next((t for t in inputs if isinstance(t, Tensor)), None)
        tensors = tuple(as_tensor(t, like) for t in inputs)
        fn = cls()
        out = Tensor(fn.forward(*(t.data for t in tensors), **kwargs))
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._record = Record(op=cls.name, inputs=tensors, output=out, fn=fn)
        return out

"""
Parameters and modules.

Modules discover their parameters, buffers and sub-modules from instance
attributes (lists of modules included), which gives every parameter a stable
dotted name such as ``sed_encoder.blocks.0.conv1.weight``. Initialisation is
seeded per name so two models built from the same seed share identical
values for identically named parameters, whatever else they contain.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Any, Iterator, Optional

import numpy as np

from seld_einv2.diffcore.tensor import Tensor, get_default_dtype


@dataclass(frozen=True)
class InitSpec:
    """How a parameter is initialised.

    kind: ``uniform_fan_in`` (U(-1/sqrt(fan_in), 1/sqrt(fan_in))), ``zeros``,
    ``ones`` or ``cross_stitch`` (per-channel [[self, other], [other, self]]).
    """

    kind: str
    fan_in: int = 1
    self_weight: float = 0.9
    other_weight: float = 0.1


class Parameter(Tensor):
    """A trainable tensor with a name path and an initialisation descriptor."""

    def __init__(self, shape: tuple[int, ...], init_spec: InitSpec, dtype: Any = None):
        super().__init__(np.zeros(shape, dtype=dtype or get_default_dtype()), requires_grad=True)
        self.name = ""
        self.init_spec = init_spec

    @property
    def tensor(self) -> Tensor:
        return self

    def initialize(self, rng: np.random.Generator) -> None:
        spec = self.init_spec
        if spec.kind == "uniform_fan_in":
            bound = 1.0 / np.sqrt(max(spec.fan_in, 1))
            values = rng.uniform(-bound, bound, size=self.shape)
        elif spec.kind == "zeros":
            values = np.zeros(self.shape)
        elif spec.kind == "ones":
            values = np.ones(self.shape)
        elif spec.kind == "cross_stitch":
            values = np.empty(self.shape)
            values[:, 0, 0] = values[:, 1, 1] = spec.self_weight
            values[:, 0, 1] = values[:, 1, 0] = spec.other_weight
        else:
            raise ValueError(f"Unknown init kind: {spec.kind}")
        self.data[...] = values


def name_seed(seed: int, name: str) -> np.random.Generator:
    """RNG stream for one named parameter."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


class Module:
    """Base class for network components."""

    def __init__(self) -> None:
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    # -- traversal --------------------------------------------------------

    def _children(self) -> Iterator[tuple[str, Any]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(prefix=f"{path}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in self._buffers.items():
            yield f"{prefix}{key}", value
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    # -- state ------------------------------------------------------------

    def initialize(self, seed: int) -> "Module":
        """Name every parameter and draw its initial values from a per-name stream."""
        for name, param in self.named_parameters():
            param.name = name
            param.initialize(name_seed(seed, name))
        return self

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: buf for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise KeyError(f"State mismatch; missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, target in own.items():
            if name in state:
                value = np.asarray(state[name])
                if value.shape != target.shape:
                    raise ValueError(f"Shape mismatch for {name}: {value.shape} vs {target.shape}")
                target[...] = value

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def find_parameter(module: Module, name: str) -> Optional[Parameter]:
    return dict(module.named_parameters()).get(name)

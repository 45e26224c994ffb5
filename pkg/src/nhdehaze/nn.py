"""Parameter containers and small reusable layers."""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .autodiff import Tensor, conv2d, layernorm


class Parameter(Tensor):
    def __init__(self, data) -> None:
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)


class StateMismatchError(KeyError):
    """A state dict does not fit the module it is loaded into."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class Module:
    """Attribute-walking parameter container.

    Parameters and sub-modules are discovered from instance attributes in
    assignment order, which fixes the naming used by state dicts.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                yield from _named_in_sequence(value, full)

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> List[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def requires_grad_(self, flag: bool = True) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise StateMismatchError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise StateMismatchError(
                    f"tensor {name!r}: checkpoint shape {value.shape} != model shape {p.shape}"
                )
            p.data = value.astype(np.float64).copy()


def _named_in_sequence(items, prefix: str) -> Iterator[Tuple[str, Parameter]]:
    # nested lists (e.g. stages of blocks) are walked recursively
    for i, item in enumerate(items):
        if isinstance(item, Module):
            yield from item.named_parameters(f"{prefix}.{i}.")
        elif isinstance(item, Parameter):
            yield f"{prefix}.{i}", item
        elif isinstance(item, (list, tuple)):
            yield from _named_in_sequence(item, f"{prefix}.{i}")


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(
        self,
        cin: int,
        cout: int,
        kernel: int = 3,
        stride: int = 1,
        padding: Optional[int] = None,
        groups: int = 1,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
        zero_init: bool = False,
    ) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (cout, cin // groups, kernel, kernel)
        fan_in = (cin // groups) * kernel * kernel
        self.weight = Parameter(np.zeros(shape) if zero_init else uniform_init(rng, shape, fan_in))
        self.bias = Parameter(np.zeros(cout) if zero_init else uniform_init(rng, cout, fan_in)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class LayerNorm2d(Module):
    """Channel LayerNorm for ``[N, C, H, W]`` maps."""

    def __init__(self, channels: int, eps: float = 1e-6) -> None:
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gamma, self.beta, self.eps)

"""Elementwise arithmetic, reductions and shape manipulation."""

from __future__ import annotations

from typing import Any, Optional, Sequence

import numpy as np

from .tensor import ArrayLike, Function, ShapeError, Tensor, as_tensor


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc


class Add(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        return a + b

    def backward(self, g):
        return g, g


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        return a - b

    def backward(self, g):
        return g, -g


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return g * self.b, g * self.a


class Div(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        if np.any(b == 0):
            raise ZeroDivisionError("division by a tensor containing zeros")
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        gb = g / self.b
        return gb, -gb * self.a / self.b


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Power(Function):
    def forward(self, a, exponent):
        self.a, self.exponent = a, exponent
        return a**exponent

    def backward(self, g):
        p = self.exponent
        return (g * p * self.a ** (p - 1),)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    def forward(self, a):
        if np.any(a <= 0):
            raise FloatingPointError("log of a non-positive value")
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


class Sqrt(Function):
    def forward(self, a):
        if np.any(a < 0):
            raise FloatingPointError("sqrt of a negative value")
        self.out = np.sqrt(a)
        return self.out

    def backward(self, g):
        return (g * 0.5 / self.out,)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, g):
        return (g * self.sign,)


class Clamp(Function):
    # gradient passes on the closed interval [lo, hi]
    def forward(self, a, lo, hi):
        lo_ = -np.inf if lo is None else lo
        hi_ = np.inf if hi is None else hi
        self.mask = (a >= lo_) & (a <= hi_)
        return np.clip(a, lo_, hi_)

    def backward(self, g):
        return (g * self.mask,)


class Sigmoid(Function):
    def forward(self, a):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * a))
        return self.out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


class Softplus(Function):
    def forward(self, a):
        self.a = a
        return np.logaddexp(0.0, a)

    def backward(self, g):
        return (g * 0.5 * (1.0 + np.tanh(0.5 * self.a)),)


class LeakyRelu(Function):
    def forward(self, a, slope):
        self.scale = np.where(a > 0, 1.0, slope)
        return a * self.scale

    def backward(self, g):
        return (g * self.scale,)


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.shape = a.shape
        self.axis, self.keepdims = axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if np.isscalar(self.axis) else tuple(self.axis)
            axes = tuple(ax % len(self.shape) for ax in axes)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, g):
        if self.axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, a, index):
        self.shape, self.index = a.shape, index
        return a[index]

    def backward(self, g):
        out = np.zeros(self.shape)
        np.add.at(out, self.index, g)
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=self.axis))


class Pad2d(Function):
    """Zero or reflect padding of the last two axes."""

    def forward(self, a, pads, mode):
        top, bottom, left, right = pads
        self.pads, self.mode, self.shape = pads, mode, a.shape
        width = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
        return np.pad(a, width, mode="constant" if mode == "zeros" else "reflect")

    def backward(self, g):
        top, bottom, left, right = self.pads
        h, w = self.shape[-2:]
        if self.mode == "zeros":
            return (g[..., top : top + h, left : left + w].copy(),)
        g = g.copy()
        # fold reflected borders back onto their sources
        for i in range(top):
            g[..., top + top - i, :] += g[..., i, :]
        for i in range(bottom):
            src = top + h - 2 - i
            g[..., src, :] += g[..., top + h + i, :]
        g = g[..., top : top + h, :]
        for j in range(left):
            g[..., left + left - j] += g[..., j]
        for j in range(right):
            src = left + w - 2 - j
            g[..., src] += g[..., left + w + j]
        return (g[..., left : left + w].copy(),)


class MatMul(Function):
    def forward(self, a, b):
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        return g @ np.swapaxes(self.b, -1, -2), np.swapaxes(self.a, -1, -2) @ g


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Add.apply(a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Sub.apply(a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Mul.apply(a, b)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Div.apply(a, b)


def neg(a: ArrayLike) -> Tensor:
    return Neg.apply(a)


def power(a: ArrayLike, exponent: float) -> Tensor:
    return Power.apply(a, exponent=exponent)


def exp(a: ArrayLike) -> Tensor:
    return Exp.apply(a)


def log(a: ArrayLike) -> Tensor:
    return Log.apply(a)


def sqrt(a: ArrayLike) -> Tensor:
    return Sqrt.apply(a)


def abs(a: ArrayLike) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Abs.apply(a)


def clamp(a: ArrayLike, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    return Clamp.apply(a, lo=lo, hi=hi)


def sigmoid(a: ArrayLike) -> Tensor:
    return Sigmoid.apply(a)


def softplus(a: ArrayLike) -> Tensor:
    return Softplus.apply(a)


def leaky_relu(a: ArrayLike, slope: float = 0.2) -> Tensor:
    return LeakyRelu.apply(a, slope=slope)


def relu(a: ArrayLike) -> Tensor:
    return LeakyRelu.apply(a, slope=0.0)


def sum(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    # divide rather than multiply by 1/count: the mean of equal values is exact
    return Sum.apply(a, axis=axis, keepdims=keepdims) / float(count)


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def getitem(a: ArrayLike, index: Any) -> Tensor:
    return GetItem.apply(a, index=index)


def concat(tensors: Sequence[ArrayLike], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def pad2d(a: ArrayLike, pads: Sequence[int], mode: str = "zeros") -> Tensor:
    """Pad the two trailing axes by ``(top, bottom, left, right)``."""
    if mode not in ("zeros", "reflect"):
        raise ValueError(f"unknown padding mode {mode!r}")
    return Pad2d.apply(a, pads=tuple(int(p) for p in pads), mode=mode)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return MatMul.apply(a, b)

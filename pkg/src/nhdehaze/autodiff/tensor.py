"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation is a :class:`Function` subclass. Calling
``Function.apply`` runs the forward pass on raw ``numpy`` arrays and, when
any input requires a gradient, records the function on the output tensor.
Each recorded function carries a monotonically increasing sequence number,
so :func:`backward` can replay adjoints in exact reverse execution order.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Any, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

DTYPE = np.float64

_sequence = itertools.count()
_grad_enabled = True

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class GraphError(RuntimeError):
    """Raised for misuse of the recorded graph (non-scalar loss, replayed backward)."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up where a finite value is required."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Function:
    """Base class for a recorded operation.

    Subclasses implement ``forward(*arrays, **kwargs) -> ndarray`` and
    ``backward(grad) -> tuple`` returning one gradient (or ``None``) per
    tensor input, in the order the inputs were passed to :meth:`apply`.
    """

    def __init__(self, *parents: "Tensor") -> None:
        self.parents = parents
        self.seq = next(_sequence)
        self.released = False

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError

    def release(self) -> None:
        # drop saved activations; a second replay must fail loudly
        for key in list(vars(self)):
            if key not in ("parents", "seq", "released"):
                delattr(self, key)
        self.released = True

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> "Tensor":
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        track = _grad_enabled and any(t.requires_grad for t in tensors)
        if not track:
            return Tensor(out)
        return Tensor(out, requires_grad=True, _fn=fn)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus optional gradient bookkeeping.

    Parameters
    ----------
    data : array-like
        Values; converted to a float64 ``ndarray`` (copied only if needed).
    requires_grad : bool
        Whether gradients should be accumulated into :attr:`grad`.
    """

    __array_priority__ = 100.0

    def __init__(self, data: ArrayLike, requires_grad: bool = False, _fn: Optional[Function] = None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._fn = _fn

    # --- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not self.is_finite():
            bad = int((~np.isfinite(self.data)).sum())
            raise NonFiniteError(f"{what} contains {bad} non-finite value(s) (shape {self.shape})")
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # --- arithmetic ----------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        from . import ops
        return ops.transpose(self, axes or None)

    def exp(self) -> "Tensor":
        from . import ops
        return ops.exp(self)

    def log(self) -> "Tensor":
        from . import ops
        return ops.log(self)

    def abs(self) -> "Tensor":
        from . import ops
        return ops.abs(self)

    def clamp(self, lo: Optional[float] = None, hi: Optional[float] = None) -> "Tensor":
        from . import ops
        return ops.clamp(self, lo, hi)

    def backward(self, inputs: Optional[Iterable["Tensor"]] = None) -> None:
        backward(self, inputs)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _reachable(root: Tensor) -> list:
    seen: set = set()
    nodes = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        if t._fn is not None:
            stack.extend(p for p in t._fn.parents if p.requires_grad)
    return nodes


def backward(loss: Tensor, inputs: Optional[Iterable[Tensor]] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Leaves listed in ``inputs`` that the loss does not depend on receive a
    zero gradient rather than ``None``.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")

    nodes = _reachable(loss)
    interior = [t for t in nodes if t._fn is not None]
    for t in interior:
        if t._fn.released:
            raise GraphError("graph already consumed by a previous backward; recompute the forward pass")
    # exact reverse execution order
    interior.sort(key=lambda t: t._fn.seq, reverse=True)

    grads: dict = {id(loss): np.ones_like(loss.data)}
    for t in interior:
        g = grads.pop(id(t), None)
        fn = t._fn
        if g is not None:
            parent_grads = fn.backward(g)
            for p, pg in zip(fn.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    pg = unbroadcast(pg, p.shape)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
        fn.release()

    for t in nodes:
        if t._fn is None and t.requires_grad and id(t) in grads:
            g = grads[id(t)]
            t.grad = g.copy() if t.grad is None else t.grad + g

    if inputs is not None:
        for t in inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)

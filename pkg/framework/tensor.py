"""Reverse-mode automatic differentiation over a dynamically recorded graph.

Every differentiable operation is a :class:`Function` subclass whose
``forward`` works on plain numpy arrays and whose ``backward`` maps the
output gradient to one gradient per parent.  :class:`Tensor` records the
function that produced it, and :meth:`Tensor.backward` walks the graph in
reverse topological order.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Any, Iterator, Sequence

import numpy as np

from framework.errors import ConfigError, DimensionError, NonFiniteError

DTYPES: dict[str, type[np.floating]] = {"f32": np.float32, "f64": np.float64}


class _GraphState(threading.local):
    def __init__(self) -> None:
        self.dtype: np.dtype = np.dtype(np.float32)
        self.grad_enabled = True
        self.check_finite = False


_state = _GraphState()


def resolve_dtype(dtype: Any) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ConfigError(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPES)}")
        return np.dtype(DTYPES[dtype])
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported dtype {resolved}; only float32 and float64 are supported")
    return resolved


def get_default_dtype() -> np.dtype:
    return _state.dtype


@contextlib.contextmanager
def default_dtype(dtype: Any) -> Iterator[None]:
    previous = _state.dtype
    _state.dtype = resolve_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextlib.contextmanager
def detect_anomaly() -> Iterator[None]:
    """Raise :class:`NonFiniteError` naming the op as soon as NaN/Inf appears."""
    previous = _state.check_finite
    _state.check_finite = True
    try:
        yield
    finally:
        _state.check_finite = previous


def is_grad_enabled() -> bool:
    return _state.grad_enabled


class Tensor:
    """Dense array with an optional gradient slot."""

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None, _ctx: Function | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            array = np.asarray(data, dtype=resolve_dtype(dtype))
        elif isinstance(data, (np.ndarray, np.generic)) and np.issubdtype(data.dtype, np.floating):
            array = np.asarray(data)
        else:
            array = np.asarray(data, dtype=get_default_dtype())
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._ctx = _ctx

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # graph traversal

    def _topological_order(self) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            return
        if grad is None:
            if self.size != 1:
                raise DimensionError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(self._topological_order()):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            ctx = node._ctx
            if ctx is None:
                node.grad = node_grad.astype(node.dtype, copy=True) if node.grad is None else node.grad + node_grad
                continue
            parent_grads = ctx.backward(node_grad)
            for parent, parent_grad in zip(ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if _state.check_finite and not np.all(np.isfinite(parent_grad)):
                    raise NonFiniteError(type(ctx).__name__, stage="backward")
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    # arithmetic

    def __add__(self, other: Any) -> Tensor:
        return Add.apply(self, as_tensor(other, like=self))

    def __radd__(self, other: Any) -> Tensor:
        return Add.apply(as_tensor(other, like=self), self)

    def __sub__(self, other: Any) -> Tensor:
        return Sub.apply(self, as_tensor(other, like=self))

    def __rsub__(self, other: Any) -> Tensor:
        return Sub.apply(as_tensor(other, like=self), self)

    def __mul__(self, other: Any) -> Tensor:
        return Mul.apply(self, as_tensor(other, like=self))

    def __rmul__(self, other: Any) -> Tensor:
        return Mul.apply(as_tensor(other, like=self), self)

    def __truediv__(self, other: Any) -> Tensor:
        return Div.apply(self, as_tensor(other, like=self))

    def __rtruediv__(self, other: Any) -> Tensor:
        return Div.apply(as_tensor(other, like=self), self)

    def __neg__(self) -> Tensor:
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> Tensor:
        return Power.apply(self, exponent=float(exponent))

    def __getitem__(self, index: Any) -> Tensor:
        return Index.apply(self, index=index)

    def exp(self) -> Tensor:
        return Exp.apply(self)

    def log(self) -> Tensor:
        return Log.apply(self)

    def abs(self) -> Tensor:
        return Abs.apply(self)

    def sum(self, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape: Sequence[int]) -> Tensor:
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, axes: Sequence[int]) -> Tensor:
        return Transpose.apply(self, axes=tuple(axes))

    def flip(self, axis: int) -> Tensor:
        return Flip.apply(self, axis=axis)


def as_tensor(value: Any, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else get_default_dtype()
    return Tensor(np.asarray(value, dtype=dtype))


class Function:
    """One recorded op.  Subclasses implement ``forward`` and ``backward``."""

    parents: tuple[Tensor, ...]

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        ctx = cls()
        ctx.parents = tuple(inputs)
        out = ctx.forward(*(t.data for t in inputs), **kwargs)
        if _state.check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(cls.__name__)
        requires_grad = _state.grad_enabled and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, _ctx=ctx if requires_grad else None)

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _normalize_axes(axis: int | Sequence[int] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


class Add(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class Div(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        gx = grad / self.y
        gy = -grad * self.x / (self.y * self.y)
        return unbroadcast(gx, self.x.shape), unbroadcast(gy, self.y.shape)


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Power(Function):
    def forward(self, x, exponent: float):
        self.x, self.exponent = x, exponent
        return x**exponent

    def backward(self, grad):
        return (grad * self.exponent * self.x ** (self.exponent - 1),)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape = x.shape
        self.axes = _normalize_axes(axis, x.ndim)
        self.keepdims = keepdims
        return np.sum(x, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Sum):
    def forward(self, x, axis=None, keepdims=False):
        out = super().forward(x, axis=axis, keepdims=keepdims)
        self.count = int(np.prod([x.shape[a] for a in self.axes])) if self.axes else 1
        return out / self.count

    def backward(self, grad):
        (full,) = super().backward(grad)
        return (full / self.count,)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x, axes):
        self.inverse = tuple(np.argsort(axes))
        return np.transpose(x, axes)

    def backward(self, grad):
        return (np.transpose(grad, self.inverse),)


class Flip(Function):
    def forward(self, x, axis):
        self.axis = axis
        return np.flip(x, axis=axis)

    def backward(self, grad):
        return (np.flip(grad, axis=self.axis),)


class Index(Function):
    """Basic (slice/integer) indexing."""

    def forward(self, x, index):
        self.shape, self.dtype, self.index = x.shape, x.dtype, index
        return x[index]

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=self.dtype)
        full[self.index] = grad
        return (full,)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def zeros(shape: Sequence[int], dtype: Any = None) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=resolve_dtype(dtype) if dtype is not None else get_default_dtype()))

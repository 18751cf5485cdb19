"""
core/tensor.py
This module defines the dense Tensor type, the gradient Tape and the
elementwise / reduction / matrix operations every model in the lab is built from.

Operations record a Node on the active tape whenever one of their inputs
requires a gradient. backward() walks the tape in strict reverse recording
order, sums adjoints of values consumed more than once, writes the gradient
of every leaf seen on the tape and then empties the tape.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, NumericError


class DType(Enum):
    """Floating point precisions a Tensor may hold."""
    F32 = "f32"
    F64 = "f64"

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(np.float32) if self is DType.F32 else np.dtype(np.float64)

    @classmethod
    def of(cls, array: np.ndarray) -> "DType":
        if array.dtype == np.float64:
            return cls.F64
        return cls.F32


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def contiguous(array, dtype=None) -> np.ndarray:
    """C-contiguous ndarray of the same rank (0-d stays 0-d)."""
    array = np.asarray(array, dtype=dtype)
    if not array.flags.c_contiguous:
        array = array.copy(order="C")
    return array


class Tensor:
    """A row-major n-dimensional array with optional gradient tape participation.

    Attributes:
        data (np.ndarray): The values, float32 or float64, C-contiguous.
        requires_grad (bool): Whether operations on this tensor are recorded.
        grad (np.ndarray or None): Gradient written by backward(), same shape and dtype as data.
        name (str or None): Optional label used in diagnostics.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_ufunc__ = None  # numpy defers to the reflected Tensor operators

    def __init__(self, data: ArrayLike, dtype: Optional[DType] = None,
                 requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data)
        if dtype is None:
            dtype = DType.F64 if array.dtype == np.float64 else DType.F32
        array = contiguous(array, dtype.numpy)
        if any(extent <= 0 for extent in array.shape):
            raise DimensionError(f"tensor extents must be positive, got shape {array.shape}")
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    # *** properties ***
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> DType:
        return DType.of(self.data)

    def item(self) -> float:
        """Return the value of a single-element tensor as a Python float."""
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape} dtype={self.dtype.value} requires_grad={self.requires_grad}{label}>"

    # *** operators ***
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def exp(self) -> "Tensor": return exp(self)
    def log(self) -> "Tensor": return log(self)
    def sqrt(self) -> "Tensor": return sqrt(self)
    def square(self) -> "Tensor": return square(self)
    def relu(self) -> "Tensor": return relu(self)
    def silu(self) -> "Tensor": return silu(self)
    def tanh(self) -> "Tensor": return tanh(self)
    def detach(self) -> "Tensor": return detach(self)


class Node:
    """One recorded operation: its inputs, its output and the adjoint closure.

    The closure holds whatever forward values the adjoint needs and maps the
    output adjoint to one adjoint (or None) per input.
    """

    __slots__ = ("op", "inputs", "output", "adjoint")

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor,
                 adjoint: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.adjoint = adjoint

    def __repr__(self):
        return f"<Node {self.op} -> {self.output.shape}>"


class Tape:
    """Ordered record of the operations of one forward pass.

    A tape can be used as a context manager to make it the active tape of the
    current thread. Outside any such block each thread records onto its own
    default tape.
    """

    def __init__(self):
        self.nodes: list = []

    def record(self, node: Node):
        self.nodes.append(node)

    def clear(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _state().tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state().tapes.pop()
        return False

    def backward(self, loss: Tensor):
        """Populate .grad of every leaf recorded on this tape from a scalar loss.

        Leaves reachable from the loss receive their accumulated adjoint,
        unreachable leaves receive zeros. The tape is empty afterwards.

        Raises:
            ContractError: If the loss is not a scalar or was not produced on this tape.
        """
        if loss.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(node.output) for node in self.nodes}
        if id(loss) not in produced and not loss.requires_grad:
            raise ContractError("loss was not produced on an active tape")

        adjoints = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = adjoints.pop(id(node.output), None)
            if g is None:
                continue
            for tensor, contribution in zip(node.inputs, node.adjoint(g)):
                if contribution is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + contribution
                else:
                    adjoints[key] = contribution

        seen = set()
        leaves = [loss] if id(loss) not in produced else []
        for node in self.nodes:
            for tensor in node.inputs:
                if tensor.requires_grad and id(tensor) not in produced and id(tensor) not in seen:
                    seen.add(id(tensor))
                    leaves.append(tensor)
        for leaf in leaves:
            adjoint = adjoints.get(id(leaf))
            if adjoint is None:
                leaf.grad = np.zeros_like(leaf.data)
            else:
                leaf.grad = np.array(adjoint, dtype=leaf.data.dtype)
        self.clear()


class _ThreadState(threading.local):
    def __init__(self):
        self.tapes = [Tape()]
        self.enabled = True


_local = _ThreadState()


def _state() -> _ThreadState:
    return _local


def current_tape() -> Tape:
    """Return the tape operations of this thread currently record onto."""
    return _state().tapes[-1]


def grad_enabled() -> bool:
    return _state().enabled


@contextmanager
def no_grad():
    """Disable recording inside the block (evaluation, finite differences)."""
    state = _state()
    previous = state.enabled
    state.enabled = False
    try:
        yield
    finally:
        state.enabled = previous


def backward(loss: Tensor):
    """Run backward for a loss recorded on the current thread's active tape."""
    current_tape().backward(loss)


def from_op(data: np.ndarray, inputs: Tuple[Tensor, ...], adjoint, op: str) -> Tensor:
    """Wrap an op result and record it when any input requires a gradient.

    Raises:
        NumericError: If the result holds NaN or Inf.
    """
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    record = _state().enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(contiguous(data), requires_grad=record)
    if record:
        current_tape().record(Node(op, inputs, out, adjoint))
    return out


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Return value as a Tensor, casting constants to the dtype of `like`."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype.numpy if dtype else None), dtype=dtype)


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    elif isinstance(b, Tensor):
        a = as_tensor(a, like=b)
    else:
        a, b = as_tensor(a), as_tensor(b)
    if a.data.dtype != b.data.dtype:
        raise DimensionError(f"dtype mismatch: {a.dtype.value} vs {b.dtype.value}")
    return a, b


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shapes(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# *** binary ***
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shapes(a, b, "add")
    return from_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shapes(a, b, "sub")
    return from_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shapes(a, b, "mul")
    return from_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shapes(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def adjoint(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return from_op(out, (a, b), adjoint, "div")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast.

    Raises:
        DimensionError: If the inner extents or dtypes disagree.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise DimensionError(f"matmul: dtype mismatch {a.dtype.value} vs {b.dtype.value}")

    def adjoint(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return from_op(a.data @ b.data, (a, b), adjoint, "matmul")


# *** unary ***
def neg(x: Tensor) -> Tensor:
    return from_op(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a Python scalar."""
    c = x.data.dtype.type(factor)
    return from_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def square(x: Tensor) -> Tensor:
    return from_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sqrt(x: Tensor) -> Tensor:
    if (x.data < 0).any():
        raise NumericError("sqrt of a negative value")
    out = np.sqrt(x.data)
    with np.errstate(divide="ignore"):
        return from_op(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    """Natural logarithm.

    Raises:
        NumericError: If any value is zero or negative.
    """
    if (x.data <= 0).any():
        raise NumericError("log of a non-positive value")
    return from_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def abs(x: Tensor) -> Tensor:
    return from_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return from_op(x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),), "silu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return from_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def detach(x: Tensor) -> Tensor:
    """Value-identical tensor that blocks every adjoint (sg[.])."""
    return Tensor._wrap(x.data, requires_grad=False)


def straight_through(value: Tensor, surrogate: Tensor) -> Tensor:
    """Forward the values of `value`, route the adjoint to `surrogate` unchanged.

    This is a fused `value - sg[surrogate] + surrogate`: the forward result is
    bit-equal to `value` and `value` itself receives no gradient.
    """
    if value.shape != surrogate.shape:
        raise DimensionError(f"straight_through: shapes {value.shape} and {surrogate.shape} differ")
    return from_op(value.data.copy(), (value, surrogate), lambda g: (None, g), "straight_through")


# *** reductions ***
def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def adjoint(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)
    return from_op(np.asarray(out), (x,), adjoint, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis.

    The adjoint uses the fused form p * (g - <g, p>) instead of the K x K Jacobian.
    """
    if logits.ndim == 0 or logits.shape[axis] == 0:
        raise DimensionError(f"softmax: empty axis {axis} for shape {logits.shape}")
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    return from_op(p, (logits,), lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return from_op(out, (logits,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def argmax_onehot(p: Tensor) -> Tuple[np.ndarray, Tensor]:
    """Row-wise argmax (lowest index wins ties) and its one-hot encoding.

    The result is not differentiable and never recorded on a tape.
    """
    if p.ndim != 2:
        raise DimensionError(f"argmax_onehot expects a B x K tensor, got {p.shape}")
    indices = np.argmax(p.data, axis=1).astype(np.int64)
    return indices, one_hot(indices, p.shape[1], p.dtype)


def one_hot(indices: np.ndarray, num_classes: int, dtype: DType = DType.F32) -> Tensor:
    onehot = np.zeros((len(indices), num_classes), dtype=dtype.numpy)
    onehot[np.arange(len(indices)), indices] = 1
    return Tensor._wrap(onehot)


# *** shape ***
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return from_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return from_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, slice)) or k is Ellipsis or k is None for k in parts)


def getitem(x: Tensor, key) -> Tensor:
    out = x.data[key]
    basic = _is_basic_index(key)

    def adjoint(g):
        full = np.zeros_like(x.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)
    return from_op(np.array(out), (x,), adjoint, "getitem")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return from_op(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")

"""Dense tensors with reverse-mode automatic differentiation.

Values live in contiguous row-major numpy arrays (float32 or float64).
Each differentiable operation returns a fresh Tensor wired to its parents
through a backward closure.  backward() collects the reachable graph into
a GradTape (a reverse topological ordering) and replays the closures once
each, accumulating into .grad.  Gradients sum on reuse, so a tensor feeding
two consumers receives both contributions.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense array plus optional gradient bookkeeping.

    Leaf tensors created with requires_grad=True accumulate into .grad
    during backward().  Operation outputs carry parent links and a backward
    closure; they are interior nodes of the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if not (arr.flags["C_CONTIGUOUS"] and arr.flags["WRITEABLE"]):
            arr = np.array(arr)  # ascontiguousarray would flatten 0-d to (1,)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # owned copy at full shape; g may be a view into another buffer
            self.grad = np.empty_like(self.data)
            self.grad[...] = g
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __radd__(self, other):
        return add(_coerce(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    def __rmul__(self, other):
        return mul(_coerce(other, self.dtype), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad})"


def _coerce(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def make_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    bwd: Callable[[np.ndarray], None],
) -> Tensor:
    """Wrap an op result, recording the backward closure when tracing."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._bwd is not None for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


class GradTape:
    """Reverse topological ordering of the op nodes reachable from a root.

    Creation order is not tracked globally; the tape is rebuilt per
    backward() call from parent links, so one tape exists per
    forward/backward cycle and dies with it.  Each node is visited exactly
    once.
    """

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent._bwd is not None and id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = order  # topological: parents precede children

    def replay(self, root: Tensor) -> None:
        root.accumulate(np.ones_like(root.data))
        for node in reversed(self.nodes):
            if node.grad is None or node._bwd is None:
                continue  # unreachable from the root, or a leaf
            node._bwd(node.grad)
            node.grad = None  # interior grads are transient


def backward(root: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar root."""
    if root.data.size != 1:
        raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
    if root._bwd is None and not root.requires_grad:
        raise ValueError("backward() on a tensor detached from any gradient path")
    GradTape(root).replay(root)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast to reach g's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        a.accumulate(unbroadcast(g, a.shape))
        b.accumulate(unbroadcast(g, b.shape))

    return make_op(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        a.accumulate(unbroadcast(g, a.shape))
        b.accumulate(-unbroadcast(g, b.shape))

    return make_op(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        a.accumulate(unbroadcast(g * b.data, a.shape))
        b.accumulate(unbroadcast(g * a.data, b.shape))

    return make_op(out, (a, b), bwd)


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


def scalar_shift(x: Tensor, c: float) -> Tensor:
    """x + c with a python scalar; gradient passes through unchanged."""
    out = x.data + x.data.dtype.type(c)

    def bwd(g):
        x.accumulate(g)

    return make_op(out, (x,), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    """c * x with a python scalar."""
    c = x.data.dtype.type(c)
    out = x.data * c

    def bwd(g):
        x.accumulate(g * c)

    return make_op(out, (x,), bwd)


# -- shape surgery --------------------------------------------------------


def concat(parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat() of an empty sequence")
    rank = parts[0].ndim
    for i, p in enumerate(parts):
        if p.ndim != rank:
            raise ShapeError(f"concat() rank mismatch: part 0 has {rank} dims, part {i} has {p.ndim}")
    ax = axis % rank
    for d in range(rank):
        if d == ax:
            continue
        sizes = {p.shape[d] for p in parts}
        if len(sizes) > 1:
            raise ShapeError(f"concat() parts disagree on axis {d}: {sorted(sizes)}")
    out = np.concatenate([p.data for p in parts], axis=ax)
    offsets = np.cumsum([0] + [p.shape[ax] for p in parts])

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * rank
            sl[ax] = slice(lo, hi)
            p.accumulate(g[tuple(sl)])

    return make_op(out, parts, bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward scatters into place."""
    ax = axis % x.ndim
    if start < 0 or start + length > x.shape[ax]:
        raise ShapeError(
            f"narrow() range [{start}, {start + length}) exceeds axis {ax} of extent {x.shape[ax]}"
        )
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(start, start + length)
    sl = tuple(sl)
    out = x.data[sl].copy()

    def bwd(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[sl] += g

    return make_op(out, (x,), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def bwd(g):
        x.accumulate(g.reshape(x.shape))

    return make_op(out.copy(), (x,), bwd)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.ascontiguousarray(x.data.transpose(axes))
    inverse = np.argsort(axes)

    def bwd(g):
        x.accumulate(g.transpose(inverse))

    return make_op(out, (x,), bwd)


# -- reductions ------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = np.asarray(g)
        if gg.shape != x.shape:
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            gg = np.broadcast_to(gg, x.shape)
        x.accumulate(gg)

    return make_op(out, (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


# -- pointwise nonlinearities ----------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    # evaluate on the negative half-line only, for stability at large |x|
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = out.astype(d.dtype, copy=False)

    def bwd(g):
        x.accumulate(g * out * (1.0 - out))

    return make_op(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        x.accumulate(g * (x.data > 0))

    return make_op(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g):
        x.accumulate(g * (1.0 - out * out))

    return make_op(out, (x,), bwd)


def pointwise(kind: str, x: Tensor) -> Tensor:
    try:
        fn = {"sigmoid": sigmoid, "relu": relu, "tanh": tanh}[kind]
    except KeyError:
        raise ValueError(f"unknown pointwise kind {kind!r}") from None
    return fn(x)


# -- dense layers ------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias with x of shape (rows, f_in), weight (f_out, f_in)."""
    if x.ndim != 2:
        raise ShapeError(f"linear() input must be 2-d, got {x.ndim}-d")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(
            f"linear() weight {weight.shape} incompatible with input feature axis of extent {x.shape[1]}"
        )
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear() bias {bias.shape} must be ({weight.shape[0]},)")
        out = out + bias.data

    def bwd(g):
        x.accumulate(g @ weight.data)
        weight.accumulate(g.T @ x.data)
        if bias is not None:
            bias.accumulate(g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log softmax along one axis."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    logits = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g):
        x.accumulate(g - np.exp(logits) * g.sum(axis=axis, keepdims=True))

    return make_op(logits, (x,), bwd)

"""Dense tensors with a tape-based reverse-mode autodiff.

Operations on tensors that require gradients are appended to the tape that is
active in the current thread. Because the tape is append-only and every node
only refers to earlier entries, walking it backwards visits nodes in reverse
topological order.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "backward",
    "concat",
    "take",
    "where",
    "no_grad_copy",
]

_local = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


def _active_tape() -> "Tape | None":
    return getattr(_local, "tape", None)


class _Node:
    __slots__ = ("out", "parents", "backward_fn", "op", "index")

    def __init__(self, out, parents, backward_fn, op, index):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.index = index


class Tape:
    """Records operations for one reverse pass.

    Use as a context manager; a tape is owned by the thread that entered it.

        with Tape() as tape:
            loss = model(x)
        grads = tape.backward(loss, params)
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        self._prev = None
        return False

    def record(self, out: "Tensor", parents, backward_fn, op: str) -> None:
        node = _Node(out, parents, backward_fn, op, len(self.nodes))
        out._node = node
        out._tape = self
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: "Tensor", params: Iterable["Tensor"] = ()) -> dict[str, np.ndarray]:
        return backward(self, loss, params)


def backward(tape: Tape, loss: "Tensor", params: Iterable["Tensor"] = ()) -> dict[str, np.ndarray]:
    """Reverse pass from a scalar ``loss``.

    Returns a map from parameter name to gradient array. Parameters not
    reachable from the loss get an exact zero gradient.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"loss must be a rank-0 tensor, got shape {loss.shape}")
    if loss._node is None or loss._tape is not tape:
        raise ValueError("loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    stop = loss._node.index
    for node in reversed(tape.nodes[: stop + 1]):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._node is not None and parent._tape is tape and parent._node.index >= node.index:
                raise RuntimeError(f"cycle detected at op '{node.op}'")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = {}
    for p in params:
        g = grads.get(id(p))
        out[p.name] = np.zeros_like(p.data) if g is None else g.astype(p.data.dtype, copy=False)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _as_tensor(value, dtype=None) -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_node", "_tape", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._node = None
        self._tape = None

    # -- basics -----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- op plumbing ------------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward_fn: Callable, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by op '{op}'")
        needs = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs)
        if needs:
            tape = _active_tape()
            if tape is not None:
                tape.record(out, tuple(parents), backward_fn, op)
        return out

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        with np.errstate(all="ignore"):
            return Tensor._make(a.data + b.data, (a, b), bw, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        with np.errstate(all="ignore"):
            return Tensor._make(a.data - b.data, (a, b), bw, "sub")

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        with np.errstate(all="ignore"):
            return Tensor._make(a.data * b.data, (a, b), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            )

        with np.errstate(all="ignore"):
            return Tensor._make(a.data / b.data, (a, b), bw, "div")

    def __rtruediv__(self, other):
        return _as_tensor(other, self.dtype) / self

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)

        def bw(g):
            return (g * e * a.data ** (e - 1.0),)

        with np.errstate(all="ignore"):
            return Tensor._make(a.data**e, (a,), bw, "pow")

    def __matmul__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
            gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
            return ga, gb

        return Tensor._make(a.data @ b.data, (a, b), bw, "matmul")

    # -- reductions -------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- elementwise ------------------------------------------------------
    def exp(self):
        a = self
        with np.errstate(all="ignore"):
            out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: (g * out,), "exp")

    def log(self):
        a = self
        with np.errstate(all="ignore"):
            out = np.log(a.data)
        return Tensor._make(out, (a,), lambda g: (g / a.data,), "log")

    def square(self):
        a = self
        return Tensor._make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")

    def leaky_relu(self, slope: float = 0.2):
        a = self
        scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
        return Tensor._make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")

    def sigmoid(self):
        a = self
        out = _stable_sigmoid(a.data)
        return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")

    def clip(self, lo: float, hi: float):
        a = self
        inside = (a.data >= lo) & (a.data <= hi)
        return Tensor._make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")

    # -- shape ------------------------------------------------------------
    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")

    @property
    def T(self):
        a = self
        return Tensor._make(a.data.T, (a,), lambda g: (g.T,), "transpose")

    def __getitem__(self, idx):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(np.asarray(a.data[idx]), (a,), bw, "getitem")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def take(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]`` with scatter-add backward (embedding tables)."""
    idx = np.asarray(indices, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(table.data[idx], (table,), bw, "take")


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return _unbroadcast(np.where(mask, g, 0), a.shape), _unbroadcast(np.where(mask, 0, g), b.shape)

    return Tensor._make(np.where(mask, a.data, b.data), (a, b), bw, "where")


def no_grad_copy(t: Tensor, name: str | None = None) -> Tensor:
    """Independent constant copy (used for target networks)."""
    return Tensor(t.data.copy(), requires_grad=False, name=name if name is not None else t.name)

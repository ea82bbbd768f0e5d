"""Dense tensors with reverse-mode automatic differentiation.

Every op goes through :func:`apply_op`, which evaluates the forward pass with
numpy and, when any input requires a gradient, records a :class:`Node` holding
a vector-Jacobian closure. Node ids grow monotonically, so creation order is a
valid topological order and :func:`backward` just walks reachable nodes by
descending id.

Data is float32 by default. Ops preserve the dtype of their inputs, which lets
gradient checks run the same graph in float64.
"""
from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "ShapeError",
    "GraphError",
    "apply_op",
    "backward",
    "trace",
    "grad_check",
    "no_grad",
    "OP_KINDS",
]


class ShapeError(ValueError):
    """Raised when the input shapes of an op are incompatible."""


class GraphError(RuntimeError):
    """Raised for invalid backward calls or unknown op kinds."""


_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording graph nodes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass(eq=False)
class Node:
    id: int
    kind: str
    inputs: tuple["Tensor", ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    attrs: dict = field(default_factory=dict)


def _as_array(data, dtype=None) -> np.ndarray:
    return np.asarray(data, dtype=dtype or np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}{rg})"

    def _const(self, value) -> "Tensor":
        return Tensor(value, dtype=self.dtype)

    # -- operator sugar ------------------------------------------------
    def __matmul__(self, other):
        return apply_op("matmul", [self, other])

    def __add__(self, other):
        if not isinstance(other, Tensor):
            other = self._const(other)
        kind = "add" if other.shape == self.shape else "broadcast_add"
        return apply_op(kind, [self, other])

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            other = self._const(other)
        return apply_op("sub", [self, other])

    def __rsub__(self, other):
        return apply_op("sub", [self._const(other), self])

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            return apply_op("scale", [self], {"factor": float(other)})
        return apply_op("mul", [self, other])

    __rmul__ = __mul__

    def __neg__(self):
        return apply_op("scale", [self], {"factor": -1.0})

    def __getitem__(self, index):
        if not isinstance(index, tuple):
            index = (index,)
        return apply_op("slice", [self], {"index": index})

    def matmul(self, other):
        return apply_op("matmul", [self, other])

    def transpose(self, *axes):
        attrs = {"axes": tuple(axes)} if axes else {}
        return apply_op("transpose", [self], attrs)

    @property
    def T(self):
        return self.transpose()

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_op("reshape", [self], {"shape": tuple(shape)})

    def sum(self, axis=None, keepdims=False):
        return apply_op("sum", [self], {"axis": axis, "keepdims": keepdims})

    def mean(self, axis=None, keepdims=False):
        return apply_op("mean", [self], {"axis": axis, "keepdims": keepdims})

    def softmax(self, axis=-1):
        return apply_op("softmax", [self], {"axis": axis})

    def layer_norm(self, axis=-1, eps=1e-5):
        return apply_op("layer_norm", [self], {"axis": axis, "eps": eps})

    def sigmoid(self):
        return apply_op("sigmoid", [self])

    def gelu(self):
        return apply_op("gelu", [self])

    def backward(self) -> None:
        backward(self)


# ----------------------------------------------------------------------
# op implementations: each returns (output array, vjp closure)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast {list(a.shape)} with {list(b.shape)}") from None


def _op_matmul(xs, attrs):
    a, b = xs
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands need ndim >= 2, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dims differ, {list(a.shape)} @ {list(b.shape)} "
            f"({a.shape[-1]} != {b.shape[-2]})"
        )
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims {list(a.shape[:-2])} vs {list(b.shape[:-2])}") from None
    out = a @ b

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
        return ga, gb

    return out, vjp


def _op_add(xs, attrs):
    a, b = xs
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {list(a.shape)} vs {list(b.shape)}; use broadcast_add")
    return a + b, lambda g: (g, g)


def _op_broadcast_add(xs, attrs):
    a, b = xs
    _broadcast_shape("broadcast_add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _op_sub(xs, attrs):
    a, b = xs
    _broadcast_shape("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _op_mul(xs, attrs):
    a, b = xs
    _broadcast_shape("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _op_scale(xs, attrs):
    (a,) = xs
    c = attrs["factor"]
    return a * a.dtype.type(c), lambda g: (g * g.dtype.type(c),)


def _op_transpose(xs, attrs):
    (a,) = xs
    axes = attrs.get("axes")
    if not axes:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need ndim >= 2, got {list(a.shape)}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {list(a.shape)}")
    inv = tuple(np.argsort(axes))
    return np.transpose(a, axes), lambda g: (np.transpose(g, inv),)


def _op_reshape(xs, attrs):
    (a,) = xs
    shape = attrs["shape"]
    try:
        out = a.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {list(a.shape)} into {list(shape)}") from None
    return out, lambda g: (g.reshape(a.shape),)


def _op_concat(xs, attrs):
    axis = attrs.get("axis", 0)
    ref = xs[0]
    ax = axis % ref.ndim
    for x in xs[1:]:
        if x.ndim != ref.ndim or any(
            x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(
                f"concat: shapes {list(ref.shape)} and {list(x.shape)} differ off axis {axis}"
            )
    out = np.concatenate(xs, axis=ax)
    splits = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return out, vjp


def _op_slice(xs, attrs):
    (a,) = xs
    index = attrs["index"]
    try:
        out = a[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {list(a.shape)}") from None
    out = np.ascontiguousarray(out)

    def vjp(g):
        full = np.zeros_like(a)
        full[index] = g
        return (full,)

    return out, vjp


def _op_softmax(xs, attrs):
    (a,) = xs
    axis = attrs.get("axis", -1)
    z = a - a.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return y, vjp


def _op_layer_norm(xs, attrs):
    (a,) = xs
    axis = attrs.get("axis", -1)
    eps = attrs.get("eps", 1e-5)
    mu = a.mean(axis=axis, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.dtype.type(eps))
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return y, vjp


def _op_sigmoid(xs, attrs):
    (a,) = xs
    y = 0.5 * (1 + np.tanh(0.5 * a))
    return y, lambda g: (g * y * (1 - y),)


_GELU_C = math.sqrt(2.0 / math.pi)


def _op_gelu(xs, attrs):
    (a,) = xs
    c = a.dtype.type(_GELU_C)
    k = a.dtype.type(0.044715)
    u = c * (a + k * a**3)
    th = np.tanh(u)
    y = 0.5 * a * (1 + th)

    def vjp(g):
        du = c * (1 + 3 * k * a * a)
        return (g * (0.5 * (1 + th) + 0.5 * a * (1 - th * th) * du),)

    return y, vjp


def _op_embedding_lookup(xs, attrs):
    (table,) = xs
    idx = np.asarray(attrs["indices"], dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {list(table.shape)}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: indices out of range for table with {table.shape[0]} rows"
        )
    out = table[idx]

    def vjp(g):
        gt = np.zeros_like(table)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return out, vjp


def _op_sum(xs, attrs):
    (a,) = xs
    axis, keepdims = attrs.get("axis"), attrs.get("keepdims", False)
    out = np.asarray(a.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return out, vjp


def _op_mean(xs, attrs):
    (a,) = xs
    axis, keepdims = attrs.get("axis"), attrs.get("keepdims", False)
    out = np.asarray(a.mean(axis=axis, keepdims=keepdims), dtype=a.dtype)
    count = a.size // max(out.size, 1) if a.size else 1

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / a.dtype.type(count), a.shape).copy(),)

    return out, vjp


def _op_mse_loss(xs, attrs):
    pred, target = xs
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes differ, {list(pred.shape)} vs {list(target.shape)}")
    diff = pred - target
    out = np.asarray((diff * diff).mean(), dtype=pred.dtype)
    n = pred.dtype.type(max(pred.size, 1))

    def vjp(g):
        gp = (2 / n) * g * diff
        return gp, -gp

    return out, vjp


_OPS: dict[str, Callable] = {
    "matmul": _op_matmul,
    "add": _op_add,
    "broadcast_add": _op_broadcast_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "scale": _op_scale,
    "transpose": _op_transpose,
    "reshape": _op_reshape,
    "concat": _op_concat,
    "slice": _op_slice,
    "softmax": _op_softmax,
    "layer_norm": _op_layer_norm,
    "sigmoid": _op_sigmoid,
    "gelu": _op_gelu,
    "embedding_lookup": _op_embedding_lookup,
    "mean": _op_mean,
    "sum": _op_sum,
    "mse_loss": _op_mse_loss,
}

OP_KINDS = tuple(_OPS)


def apply_op(kind: str, inputs: Sequence[Tensor], attrs: dict[str, Any] | None = None) -> Tensor:
    """Evaluate op ``kind`` on ``inputs`` and record a graph node if needed."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise GraphError(f"unknown op kind {kind!r}") from None
    attrs = attrs or {}
    out_data, vjp = fn([t.data for t in inputs], attrs)
    out = Tensor(out_data, dtype=out_data.dtype)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(next(_ids), kind, tuple(inputs), vjp, attrs)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply_op("concat", list(tensors), {"axis": axis})


def embedding_lookup(table: Tensor, indices) -> Tensor:
    return apply_op("embedding_lookup", [table], {"indices": indices})


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    return apply_op("mse_loss", [pred, target])


def _reachable(loss: Tensor) -> dict[int, Tensor]:
    owners: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        n = t.node
        if n is None or n.id in owners:
            continue
        owners[n.id] = t
        stack.extend(n.inputs)
    return owners


def trace(loss: Tensor) -> list[Node]:
    """Nodes reachable from ``loss`` in topological (creation) order."""
    owners = _reachable(loss)
    return [owners[k].node for k in sorted(owners)]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise GraphError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if loss.node is None:
        raise GraphError("loss is detached: it was not produced by a recorded graph")
    owners = _reachable(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for nid in sorted(owners, reverse=True):
        out = owners[nid]
        g = grads.pop(id(out), None)
        if g is None:
            continue
        node = out.node
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is None:
                inp.grad = gi.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi


def grad_check(fn: Callable[[Tensor], Tensor], input: Tensor, h: float = 1e-3) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``fn`` maps a tensor to a scalar loss. Error per element is
    ``|analytic - numeric| / max(|analytic|, 1e-6)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = Tensor(input.data.copy(), requires_grad=True, dtype=input.dtype)
    backward(fn(x))
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(x).data)
            flat[i] = orig - h
            fm = float(fn(x).data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    err = np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-6)
    return float(err.max()) if err.size else 0.0

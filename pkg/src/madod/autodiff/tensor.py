"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
vector-Jacobian product closure. ``backward`` walks the recorded DAG in
reverse topological order. Graphs are rebuilt on every forward pass; the
inner-loop update used by meta-training is itself written with these ops, so
gradients of the outer loss flow through it without any higher-order
machinery.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "topological_order",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "matmul",
    "transpose",
    "reshape",
    "take",
    "relu",
    "exp",
    "log",
    "absolute",
    "tsum",
    "mean",
    "tmax",
    "softmax",
    "log_softmax",
    "logsumexp",
    "l1_distance",
    "squared_hinge",
    "sign",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


Vjp = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Vjp | None = None

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
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp: Vjp, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


# ----------------------------------------------------------------- binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: denominator contains zeros")
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _node(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


# ------------------------------------------------------------------ unary ops


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(np.atleast_1d(shape))) from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take(a, indices, axis: int = 0) -> Tensor:
    """Select entries along ``axis``; the adjoint scatter-adds back."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (out,)

    return _node(np.take(a.data, idx, axis=axis), (a,), vjp, "take")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("exp overflow")
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise FloatingPointError("log of a non-positive value")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def sign(a) -> Tensor:
    """Elementwise sign as a constant; derivative is zero almost everywhere."""
    return Tensor(np.sign(as_tensor(a).data))


def squared_hinge(a) -> Tensor:
    """max(0, a) squared."""
    a = as_tensor(a)
    r = np.maximum(a.data, 0.0)
    return _node(r * r, (a,), lambda g: (2.0 * g * r,), "squared_hinge")


# ----------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _node(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims),),
        "sum",
    )


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return _node(
        a.data.mean(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,),
        "mean",
    )


def tmax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max-reduce. Tied maxima share the incoming gradient equally."""
    a = as_tensor(a)
    out = a.data.max(axis=axis, keepdims=True)
    hit = (a.data == out).astype(np.float64)
    hit /= hit.sum(axis=axis, keepdims=True)
    value = out if keepdims else (out.reshape(()) if axis is None else np.squeeze(out, axis=axis))
    return _node(
        value,
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims) * hit,),
        "max",
    )


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """log(sum(exp(a))) with the max subtracted before exponentiating."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    value = out if keepdims else np.squeeze(out, axis=axis)
    return _node(
        value,
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims) * soft,),
        "logsumexp",
    )


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return _node(
        out,
        (a,),
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
        "softmax",
    )


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _node(
        out,
        (a,),
        lambda g: (g - soft * g.sum(axis=axis, keepdims=True),),
        "log_softmax",
    )


def l1_distance(a, b, axis: int = -1) -> Tensor:
    """Sum of absolute differences along ``axis``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("l1_distance", a.shape, b.shape)
    s = np.sign(a.data - b.data)

    def vjp(g):
        ge = np.expand_dims(g, axis) * s
        return ge, -ge

    return _node(np.abs(a.data - b.data).sum(axis=axis), (a, b), vjp, "l1_distance")


# ------------------------------------------------------------------- backward


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``; every node appears after its parents."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, wrt: Iterable[Tensor] | None = None) -> list[np.ndarray]:
    """Populate ``.grad`` on every leaf reachable from a scalar ``root``.

    Returns the gradients for ``wrt`` (zeros for tensors that do not influence
    ``root``), in order.
    """
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    adj: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(topological_order(root)):
        g = adj.get(id(node))
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                node.grad = g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adj[key] = adj[key] + pg if key in adj else np.array(pg, dtype=np.float64)
    if wrt is None:
        return []
    return [adj.get(id(t), np.zeros_like(t.data)) for t in wrt]

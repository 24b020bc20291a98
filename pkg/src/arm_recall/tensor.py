"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` records a :class:`Node`
carrying a monotonically increasing id.  :func:`backward` walks the nodes
reachable from a scalar root in decreasing id order, so each node is visited
exactly once and after all of its consumers.

Tensor data is read-only once created; parameter updates build new tensors.
Gradients accumulate into ``Tensor.grad`` on leaves (parameters *and* inputs),
so calling backward twice on the same graph doubles them.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_node_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Node:
    __slots__ = ("id", "op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], backward_fn: BackwardFn):
        self.id = next(_node_ids)
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn

    def __repr__(self) -> str:
        ids = [t.node.id if t.node is not None else None for t in self.inputs]
        return f"Node({self.id}, {self.op!r}, inputs={ids})"


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, *, _node: Node | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node = _node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
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
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    if any(t.requires_grad for t in inputs):
        return Tensor(data, requires_grad=True, _node=Node(op, inputs, backward_fn))
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise binary ops; only same-shape, scalar, or (n x C) with row (C,)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.sum(axis=0)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, "mul", (a, b), back)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, "matmul", (a, b), back)


# ---------------------------------------------------------------------------
# unary ops


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log of a non-positive value")
    return _result(np.log(x.data), "log", (x,), lambda g: (g / x.data,))


def xlogx(x: Tensor) -> Tensor:
    """Elementwise ``x * log(x)`` with the continuous extension 0 at x = 0."""
    if np.any(x.data < 0):
        raise NumericError("xlogx of a negative value")
    pos = x.data > 0
    safe = np.where(pos, x.data, 1.0)
    logs = np.log(safe)
    out = np.where(pos, x.data * logs, 0.0)
    return _result(out, "xlogx", (x,), lambda g: (g * np.where(pos, logs + 1.0, 0.0),))


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _result(np.abs(x.data), "abs", (x,), lambda g: (g * sign,))


def square(x: Tensor) -> Tensor:
    return _result(x.data * x.data, "square", (x,), lambda g: (2.0 * x.data * g,))


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), "sum", (x,), back)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from exc
    return _result(out, "reshape", (x,), lambda g: (g.reshape(old),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    if out.base is None and out.size:
        # fancy indexing copies; the backward below assumes a view (no repeats)
        raise TypeError("only basic slicing is supported")

    def back(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _result(out, "getitem", (x,), back)


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log softmax of an ``n x C`` matrix (max-subtracted)."""
    if logits.ndim != 2:
        raise DimensionError(f"log_softmax expects n x C, got {logits.shape}")
    if logits.shape[1] < 2:
        raise ContractError("log_softmax needs at least two classes")
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise NumericError("log_softmax received non-finite logits")
    shifted = x - x.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def back(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _result(out, "log_softmax", (logits,), back)


def softmax(logits: Tensor) -> Tensor:
    return exp(log_softmax(logits))


# ---------------------------------------------------------------------------
# reverse pass


class Graph:
    """The recorded nodes reachable from ``root``, ordered by creation id."""

    def __init__(self, root: Tensor):
        self.root = root
        seen: dict[int, Node] = {}
        stack = [root.node] if root.node is not None else []
        while stack:
            node = stack.pop()
            if node.id in seen:
                continue
            seen[node.id] = node
            stack.extend(t.node for t in node.inputs if t.node is not None and t.requires_grad)
        self.nodes: list[Node] = [seen[k] for k in sorted(seen)]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into every reachable ``requires_grad`` leaf.

    Returns the gradients contributed by this pass, keyed by leaf tensor.
    """
    if root.shape != ():
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    if root.node is None:
        leaf_grads[root] = np.ones(())
    else:
        node_grads: dict[int, np.ndarray] = {root.node.id: np.ones(())}
        for node in reversed(Graph(root).nodes):
            g = node_grads.pop(node.id, None)
            if g is None:
                continue
            for inp, ig in zip(node.inputs, node.backward_fn(g)):
                if ig is None or not inp.requires_grad:
                    continue
                if inp.node is None:
                    prev = leaf_grads.get(inp)
                    leaf_grads[inp] = ig if prev is None else prev + ig
                else:
                    prev = node_grads.get(inp.node.id)
                    node_grads[inp.node.id] = ig if prev is None else prev + ig
    for leaf, g in leaf_grads.items():
        g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return leaf_grads


def grad_of(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` (fresh leaf, so no accumulation)."""
    leaf = Tensor(x, requires_grad=True)
    backward(f(leaf))
    return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    Per coordinate: ``|a - n| / (|a| + |n| + 1e-12)``.
    """
    base = np.array(as_tensor(x).data, dtype=np.float64)
    analytic = grad_of(f, base)
    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(Tensor(base)).item()
        flat[i] = orig - eps
        down = f(Tensor(base)).item()
        flat[i] = orig
        num_flat[i] = (up - down) / (2 * eps)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(rel.max()) if rel.size else 0.0

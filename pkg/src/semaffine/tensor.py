"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable value in the package is a :class:`Tensor`. Each op
records its parents and a backward closure on the result node, so the graph
hanging off a scalar loss *is* the tape: node ids increase in creation order
(parents precede children) and ``backward`` replays it in reverse.

Design constraints:

- float64 throughout; gradient checking needs the headroom.
- row-major data; the only implicit broadcast is (n, d) op (d,), used for
  bias/gain rows. Everything else must match shapes exactly.
- forward values are saved eagerly by the closures; no checkpointing.

A tensor graph is single-threaded during one forward/backward pass; distinct
graphs (one per scene/worker) share no mutable state.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_NODE_IDS = itertools.count()


class Tensor:
    """A dense array node on the differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward_fn", "node_id")

    def __init__(self, data, requires_grad=False, op="leaf", parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self._backward_fn = None
        self.node_id = next(_NODE_IDS)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def softplus(self):
        return softplus(self)

    def exp(self):
        return exp(self)

    def softmax(self, axis=-1):
        return softmax(self, axis)

    def log_softmax(self, axis=-1):
        return log_softmax(self, axis)

    def transpose(self):
        return transpose(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def backward(self):
        backward(self)


def _result(data, parents, op, backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), op=op, parents=parents)
    if out.requires_grad:
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- binary arithmetic ---------------------------------------------------


def _check_binary(a: Tensor, b: Tensor, name: str) -> bool:
    """Validate shapes for a binary op; returns True for the (n,d) op (d,) row broadcast."""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return True
    raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    row_broadcast = _check_binary(a, b, "add")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, g.sum(axis=0) if row_broadcast else g)

    return _result(a.data + b.data, (a, b), "add", backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    row_broadcast = _check_binary(a, b, "sub")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, -(g.sum(axis=0) if row_broadcast else g))

    return _result(a.data - b.data, (a, b), "sub", backward_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    row_broadcast = _check_binary(a, b, "mul")
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        _accumulate(a, g * b_data)
        _accumulate(b, (g * a_data).sum(axis=0) if row_broadcast else g * a_data)

    return _result(a_data * b_data, (a, b), "mul", backward_fn)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def backward_fn(g):
        _accumulate(a, c * g)

    return _result(a.data * c, (a,), "scale", backward_fn)


# -- matrix ops ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        _accumulate(a, g @ b_data.T)
        _accumulate(b, a_data.T @ g)

    return _result(a_data @ b_data, (a, b), "matmul", backward_fn)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expects a 2-d operand, got {a.shape}")

    def backward_fn(g):
        _accumulate(a, g.T)

    return _result(a.data.T.copy(), (a,), "transpose", backward_fn)


# -- elementwise nonlinearities -------------------------------------------


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward_fn(g):
        _accumulate(a, g * mask)

    return _result(np.where(mask, a.data, 0.0), (a,), "relu", backward_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch on sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data

    def backward_fn(g):
        _accumulate(a, g * _sigmoid(x))

    return _result(np.logaddexp(0.0, x), (a,), "softplus", backward_fn)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward_fn(g):
        _accumulate(a, g * out_data)

    return _result(out_data, (a,), "exp", backward_fn)


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ELEMENTWISE_UNARY = {"relu": relu, "softplus": softplus, "exp": exp}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch an entrywise op by name: add/sub/mul take two tensors,
    relu/softplus/exp take one, scale takes (tensor, constant)."""
    if op in _ELEMENTWISE_BINARY:
        if len(operands) != 2:
            raise ContractError(f"elementwise {op!r} takes 2 operands, got {len(operands)}")
        return _ELEMENTWISE_BINARY[op](*operands)
    if op in _ELEMENTWISE_UNARY:
        if len(operands) != 1:
            raise ContractError(f"elementwise {op!r} takes 1 operand, got {len(operands)}")
        return _ELEMENTWISE_UNARY[op](*operands)
    if op == "scale":
        if len(operands) != 2:
            raise ContractError(f"elementwise 'scale' takes (tensor, constant), got {len(operands)} operands")
        return scale(operands[0], operands[1])
    raise ContractError(f"unknown elementwise op {op!r}")


# -- softmax family --------------------------------------------------------


def _check_axis(a: Tensor, axis: int) -> int:
    ndim = a.data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    return axis % ndim


def softmax(a, axis=-1) -> Tensor:
    a = _as_tensor(a)
    axis = _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        _accumulate(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (a,), "softmax", backward_fn)


def log_softmax(a, axis=-1) -> Tensor:
    a = _as_tensor(a)
    axis = _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = np.exp(out_data)

    def backward_fn(g):
        _accumulate(a, g - y * g.sum(axis=axis, keepdims=True))

    return _result(out_data, (a,), "log_softmax", backward_fn)


def channel_normalize(a, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean and (population) unit variance.

    The denominator is sqrt(var + eps), so constant rows map to zeros.
    """
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"channel_normalize: expects (n, d) input, got {a.shape}")
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * inv

    def backward_fn(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        _accumulate(a, inv * (g - gm - y * gy))

    return _result(y, (a,), "channel_normalize", backward_fn)


# -- reductions and indexing ----------------------------------------------


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.shape

    def backward_fn(g):
        _accumulate(a, np.full(in_shape, float(g)))

    return _result(a.data.sum(), (a,), "sum", backward_fn)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.shape
    n = a.data.size

    def backward_fn(g):
        _accumulate(a, np.full(in_shape, float(g) / n))

    return _result(a.data.mean(), (a,), "mean", backward_fn)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols[{start}:{stop}] invalid for shape {a.shape}")
    in_shape = a.shape

    def backward_fn(g):
        full = np.zeros(in_shape)
        full[:, start:stop] = g
        _accumulate(a, full)

    return _result(a.data[:, start:stop].copy(), (a,), "slice_cols", backward_fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat_cols: no operands")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts disagree ({[p.shape for p in parts]})")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward_fn(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), "concat_cols", backward_fn)


def gather_rows(a, index: np.ndarray) -> Tensor:
    """out[j] = a[index[j]]; gradient scatter-adds back onto the source rows."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: expects (n, d) input, got {a.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ContractError(f"gather_rows: index out of range for {a.shape[0]} rows")
    in_shape = a.shape

    def backward_fn(g):
        full = np.zeros(in_shape)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _result(a.data[index], (a,), "gather_rows", backward_fn)


def pool_rows_mean(a, parent: np.ndarray, n_parents: int) -> Tensor:
    """Group rows by parent index and average each group."""
    a = _as_tensor(a)
    parent = np.asarray(parent, dtype=np.int64)
    if a.data.ndim != 2 or parent.shape != (a.shape[0],):
        raise ShapeError(f"pool_rows_mean: parent map {parent.shape} does not match input {a.shape}")
    counts = np.bincount(parent, minlength=n_parents).astype(np.float64)
    if (counts == 0).any():
        raise ContractError("pool_rows_mean: some parents have no children")
    sums = np.zeros((n_parents, a.shape[1]))
    np.add.at(sums, parent, a.data)
    inv_counts = 1.0 / counts

    def backward_fn(g):
        _accumulate(a, (g * inv_counts[:, None])[parent])

    return _result(sums * inv_counts[:, None], (a,), "pool_rows_mean", backward_fn)


def pick(a, index: np.ndarray) -> Tensor:
    """out[j] = a[j, index[j]] for a 2-d tensor; used to select labelled logits."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"pick: index {index.shape} does not match input {a.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise ContractError(f"pick: class index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])
    in_shape = a.shape

    def backward_fn(g):
        full = np.zeros(in_shape)
        full[rows, index] = g
        _accumulate(a, full)

    return _result(a.data[rows, index], (a,), "pick", backward_fn)


# -- backward ---------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over grad-requiring ancestors; parents precede children."""
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate ``grad`` on every grad-enabled ancestor of a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)

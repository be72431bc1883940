"""Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive records a node on a :class:`Graph` (a flat tape); calling
:func:`backward` walks the tape in reverse insertion order and accumulates
gradients. All arrays are float64 and every primitive asserts finiteness of
its output, so NaN/Inf surface at the op that produced them instead of three
layers later.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class NonScalarLoss(ValueError):
    pass


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Value:
    """Handle to one node's output array inside a Graph."""

    __slots__ = ("graph", "nid", "data")

    def __init__(self, graph: "Graph", nid: int, data: np.ndarray):
        self.graph = graph
        self.nid = nid
        self.data = data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Value(nid={self.nid}, shape={self.shape})"

    # Operator sugar so model code reads like plain numpy.
    def __add__(self, other: "Value") -> "Value":
        return add(self, other)

    def __sub__(self, other: "Value") -> "Value":
        return add(self, scale(other, -1.0))

    def __mul__(self, other: "Value") -> "Value":
        return mul(self, other)

    def __matmul__(self, other: "Value") -> "Value":
        return matmul(self, other)

    def __neg__(self) -> "Value":
        return scale(self, -1.0)

    def __getitem__(self, key) -> "Value":
        return slice_of(self, key)


class _Node:
    __slots__ = ("op", "inputs", "backward", "name")

    def __init__(self, op: str, inputs: tuple[int, ...], backward, name: str | None):
        self.op = op
        self.inputs = inputs
        self.backward = backward  # Callable[[ndarray], list[ndarray | None]] or None
        self.name = name


class Graph:
    """Append-only record of primitive applications.

    Insertion order is a topological order by construction, which makes the
    backward pass a single reverse sweep.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.outputs: list[np.ndarray] = []
        self.param_nodes: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, op: str, inputs: Sequence[Value], out: np.ndarray,
                backward, name: str | None = None) -> Value:
        if not np.isfinite(out).all():
            raise NonFiniteError(f"non-finite output from op '{op}'")
        nid = len(self.nodes)
        self.nodes.append(_Node(op, tuple(v.nid for v in inputs), backward, name))
        self.outputs.append(out)
        return Value(self, nid, out)

    def leaf(self, data) -> Value:
        """Record a gradient-tracked input array."""
        return self._record("leaf", (), _as_f64(data), None)

    def constant(self, data) -> Value:
        """Record an array that never receives a gradient."""
        v = self._record("const", (), _as_f64(data), None)
        return v

    def parameter(self, name: str, data) -> Value:
        """Record a named trainable leaf; its gradient is retrievable by name."""
        if name in self.param_nodes:
            raise ValueError(f"parameter '{name}' bound twice")
        v = self._record("param", (), _as_f64(data), None, name=name)
        self.param_nodes[name] = v.nid
        return v


class BoundParams:
    """Lazy view binding a parameter store into one graph as named leaves."""

    def __init__(self, graph: Graph, params):
        self.graph = graph
        self.params = params
        self._cache: dict[str, Value] = {}

    def __getitem__(self, name: str) -> Value:
        v = self._cache.get(name)
        if v is None:
            v = self.graph.parameter(name, self.params.get(name))
            self._cache[name] = v
        return v


def _same_graph(*values: Value) -> Graph:
    g = values[0].graph
    for v in values[1:]:
        if v.graph is not g:
            raise ValueError("values belong to different graphs")
    return g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a: Value, b: Value) -> Value:
    g = _same_graph(a, b)
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def bw(go):
        return [_unbroadcast(go, ash), _unbroadcast(go, bsh)]

    return g._record("add", (a, b), out, bw)


def mul(a: Value, b: Value) -> Value:
    g = _same_graph(a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(go):
        return [_unbroadcast(go * bd, ad.shape), _unbroadcast(go * ad, bd.shape)]

    return g._record("mul", (a, b), out, bw)


def scale(x: Value, k: float) -> Value:
    k = float(k)

    def bw(go):
        return [go * k]

    return x.graph._record("scale", (x,), x.data * k, bw)


def matmul(a: Value, b: Value) -> Value:
    g = _same_graph(a, b)
    ad, bd = a.data, b.data
    if ad.ndim > 2 or bd.ndim > 2 or ad.ndim == 0 or bd.ndim == 0:
        raise ShapeMismatch(f"matmul supports 1-D/2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim >= 1 else None):
        raise ShapeMismatch(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bw(go):
        if ad.ndim == 1 and bd.ndim == 1:  # inner product, go scalar
            return [go * bd, go * ad]
        if ad.ndim == 1:  # (k,) @ (k,n) -> (n,)
            return [bd @ go, np.outer(ad, go)]
        if bd.ndim == 1:  # (m,k) @ (k,) -> (m,)
            return [np.outer(go, bd), ad.T @ go]
        return [go @ bd.T, ad.T @ go]

    return g._record("matmul", (a, b), out, bw)


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    if not values:
        raise ShapeMismatch("concat of zero values")
    g = _same_graph(*values)
    out = np.concatenate([v.data for v in values], axis=axis)
    sizes = [v.data.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def bw(go):
        return list(np.split(go, splits, axis=axis))

    return g._record("concat", tuple(values), out, bw)


def slice_of(x: Value, key) -> Value:
    out = x.data[key]
    in_shape = x.data.shape

    def bw(go):
        gx = np.zeros(in_shape)
        gx[key] += go
        return [gx]

    return x.graph._record("slice", (x,), np.array(out, copy=True), bw)


def reshape(x: Value, shape: tuple[int, ...]) -> Value:
    in_shape = x.data.shape

    def bw(go):
        return [go.reshape(in_shape)]

    return x.graph._record("reshape", (x,), x.data.reshape(shape), bw)


def transpose(x: Value) -> Value:
    if x.data.ndim != 2:
        raise ShapeMismatch("transpose expects a 2-D value")

    def bw(go):
        return [go.T]

    return x.graph._record("transpose", (x,), x.data.T.copy(), bw)


def sigmoid(x: Value) -> Value:
    out = 1.0 / (1.0 + np.exp(-x.data))

    def bw(go):
        return [go * out * (1.0 - out)]

    return x.graph._record("sigmoid", (x,), out, bw)


def tanh(x: Value) -> Value:
    out = np.tanh(x.data)

    def bw(go):
        return [go * (1.0 - out * out)]

    return x.graph._record("tanh", (x,), out, bw)


def relu(x: Value) -> Value:
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def bw(go):
        return [go * mask]

    return x.graph._record("relu", (x,), out, bw)


def log(x: Value) -> Value:
    xd = x.data

    def bw(go):
        return [go / xd]

    return x.graph._record("log", (x,), np.log(xd), bw)


def softmax(x: Value, axis: int = -1) -> Value:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(go):
        dot = (go * out).sum(axis=axis, keepdims=True)
        return [out * (go - dot)]

    return x.graph._record("softmax", (x,), out, bw)


def embedding_lookup(table: Value, ids) -> Value:
    """Gather rows `ids` from a 2-D table; gradient scatter-adds back.

    Also serves as a general row-gather (repeated indices allowed).
    """
    idx = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2:
        raise ShapeMismatch("embedding_lookup expects a 2-D table")
    out = table.data[idx]
    tshape = table.data.shape

    def bw(go):
        gt = np.zeros(tshape)
        np.add.at(gt, idx, go)
        return [gt]

    return table.graph._record("embedding_lookup", (table,), out, bw)


def dropout(x: Value, p: float, train: bool, rng: np.random.Generator | None = None) -> Value:
    """Inverted dropout; identity at eval time or when p == 0."""
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def bw(go):
        return [go * keep]

    return x.graph._record("dropout", (x,), x.data * keep, bw)


def reduce_sum(x: Value, axis: int | None = None) -> Value:
    in_shape = x.data.shape
    out = x.data.sum(axis=axis)

    def bw(go):
        if axis is None:
            return [np.full(in_shape, go)]
        return [np.broadcast_to(np.expand_dims(go, axis), in_shape).copy()]

    return x.graph._record("sum", (x,), np.asarray(out, dtype=np.float64), bw)


def reduce_mean(x: Value, axis: int | None = None) -> Value:
    n = x.data.size if axis is None else x.data.shape[axis]
    return scale(reduce_sum(x, axis=axis), 1.0 / n)


def stack_rows(values: Sequence[Value]) -> Value:
    """Stack 1-D values of equal length into a 2-D matrix."""
    return concat([reshape(v, (1, v.size)) for v in values], axis=0)


# ---------------------------------------------------------------------------
# backward


def backward(graph: Graph, loss: Value) -> dict[int, np.ndarray]:
    """Gradient of a scalar loss w.r.t. every reached node, keyed by node id."""
    if loss.graph is not graph:
        raise ValueError("loss does not belong to this graph")
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
    grads: list[np.ndarray | None] = [None] * len(graph.nodes)
    grads[loss.nid] = np.ones_like(loss.data)
    for nid in range(loss.nid, -1, -1):
        go = grads[nid]
        if go is None:
            continue
        node = graph.nodes[nid]
        if node.backward is None:
            continue
        for in_nid, gin in zip(node.inputs, node.backward(go)):
            if gin is None:
                continue
            if grads[in_nid] is None:
                grads[in_nid] = gin
            else:
                grads[in_nid] = grads[in_nid] + gin
    return {nid: g for nid, g in enumerate(grads) if g is not None}


def parameter_gradients(graph: Graph, loss: Value,
                        names: Sequence[str] | None = None,
                        params=None) -> dict[str, np.ndarray]:
    """Gradients for named parameter leaves.

    Names not reached by the loss get explicit zeros so optimizer calls can
    rely on a complete key set; `params` supplies shapes for names that were
    never bound into the graph at all.
    """
    node_grads = backward(graph, loss)
    if names is None:
        names = list(graph.param_nodes)
    out: dict[str, np.ndarray] = {}
    for name in names:
        nid = graph.param_nodes.get(name)
        if nid is not None and nid in node_grads:
            out[name] = node_grads[nid]
        elif nid is not None:
            out[name] = np.zeros(graph.outputs[nid].shape)
        elif params is not None:
            out[name] = np.zeros(params.get(name).shape)
        else:
            raise KeyError(f"parameter never bound into graph: {name}")
    return out

"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` records every operation in construction order. Nodes whose
inputs are all bound are evaluated eagerly; nodes downstream of an unbound
placeholder stay empty until :meth:`Graph.forward` binds it. ``backward``
walks the tape in exact reverse order.

Supported shapes are scalars, vectors and 2-D (batch, features) arrays.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class ShapeError(ValueError):
    pass


class GraphStateError(RuntimeError):
    pass


class Node:
    __slots__ = ("graph", "id", "op", "inputs", "attrs", "name", "value", "cache", "grad")

    def __init__(self, graph, id, op, inputs, attrs=None, name=None, value=None):
        self.graph = graph
        self.id = id
        self.op = op
        self.inputs = inputs
        self.attrs = attrs or {}
        self.name = name
        self.value = value
        self.cache = None
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.attrs["shape"]

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}#{self.id}, shape={self.shape})"

    def __add__(self, other):
        return self.graph.add(self, other)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return self.graph.mul(self, other)
        return self.graph.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.graph.scale(self, -1.0)


def _as_array(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"only rank <= 2 arrays are supported, got shape {arr.shape}")
    return arr


def _unbias(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a (B, n) gradient down to the (n,) bias it was broadcast from."""
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0)


# Each op is (forward, backward). forward(values, attrs, graph) -> (out, cache);
# backward(grad, values, out, cache, attrs) -> tuple of input grads.


def _fw_add(v, a, g):
    return v[0] + v[1], None


def _bw_add(gr, v, out, c, a):
    return _unbias(gr, v[0].shape), _unbias(gr, v[1].shape)


def _fw_sub(v, a, g):
    return v[0] - v[1], None


def _bw_sub(gr, v, out, c, a):
    return _unbias(gr, v[0].shape), -_unbias(gr, v[1].shape)


def _fw_mul(v, a, g):
    return v[0] * v[1], None


def _bw_mul(gr, v, out, c, a):
    return gr * v[1], gr * v[0]


def _fw_scale(v, a, g):
    return v[0] * a["k"], None


def _bw_scale(gr, v, out, c, a):
    return (gr * a["k"],)


def _fw_linear(v, a, g):
    x, w = v[0], v[1]
    out = x @ w.T
    if len(v) == 3:
        out = out + v[2]
    return out, None


def _bw_linear(gr, v, out, c, a):
    x, w = v[0], v[1]
    dx = gr @ w
    dw = np.outer(gr, x) if x.ndim == 1 else gr.T @ x
    if len(v) == 3:
        return dx, dw, _unbias(gr, v[2].shape)
    return dx, dw


def _fw_tanh(v, a, g):
    return np.tanh(v[0]), None


def _bw_tanh(gr, v, out, c, a):
    return (gr * (1.0 - out * out),)


def _fw_sigmoid(v, a, g):
    x = v[0]
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out, None


def _bw_sigmoid(gr, v, out, c, a):
    return (gr * out * (1.0 - out),)


def _fw_relu(v, a, g):
    return np.maximum(v[0], 0.0), None


def _bw_relu(gr, v, out, c, a):
    return (gr * (v[0] > 0.0),)


def _fw_exp(v, a, g):
    return np.exp(v[0]), None


def _bw_exp(gr, v, out, c, a):
    return (gr * out,)


def _fw_log(v, a, g):
    return np.log(v[0]), None


def _bw_log(gr, v, out, c, a):
    return (gr / v[0],)


def _fw_square(v, a, g):
    return v[0] * v[0], None


def _bw_square(gr, v, out, c, a):
    return (2.0 * gr * v[0],)


def _fw_clip(v, a, g):
    return np.clip(v[0], a["lo"], a["hi"]), None


def _bw_clip(gr, v, out, c, a):
    inside = (v[0] >= a["lo"]) & (v[0] <= a["hi"])
    return (gr * inside,)


def _fw_softmax(v, a, g):
    x = v[0]
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True), None


def _bw_softmax(gr, v, out, c, a):
    inner = (gr * out).sum(axis=-1, keepdims=True)
    return (out * (gr - inner),)


def _fw_log_softmax(v, a, g):
    x = v[0]
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True)), None


def _bw_log_softmax(gr, v, out, c, a):
    p = np.exp(out)
    return (gr - p * gr.sum(axis=-1, keepdims=True),)


def _fw_sum(v, a, g):
    return np.asarray(v[0].sum()), None


def _bw_sum(gr, v, out, c, a):
    return (np.full(v[0].shape, float(gr)),)


def _fw_mean(v, a, g):
    return np.asarray(v[0].mean()), None


def _bw_mean(gr, v, out, c, a):
    return (np.full(v[0].shape, float(gr) / v[0].size),)


def _fw_concat(v, a, g):
    return np.concatenate(v, axis=-1), None


def _bw_concat(gr, v, out, c, a):
    grads, start = [], 0
    for x in v:
        n = x.shape[-1]
        grads.append(gr[..., start:start + n])
        start += n
    return tuple(grads)


def _fw_stack(v, a, g):
    return np.stack(v, axis=-1), None


def _bw_stack(gr, v, out, c, a):
    return tuple(gr[..., i] for i in range(len(v)))


def _fw_pick(v, a, g):
    x, idx = v[0], a["index"]
    if x.ndim == 1:
        return np.asarray(x[idx]), None
    return x[np.arange(x.shape[0]), idx], None


def _bw_pick(gr, v, out, c, a):
    x, idx = v[0], a["index"]
    dx = np.zeros_like(x)
    if x.ndim == 1:
        dx[idx] = gr
    else:
        dx[np.arange(x.shape[0]), idx] = gr
    return (dx,)


def _fw_row_scale(v, a, g):
    x, s = v[0], v[1]
    return x * s[..., None], None


def _bw_row_scale(gr, v, out, c, a):
    x, s = v[0], v[1]
    return gr * s[..., None], (gr * x).sum(axis=-1)


def _fw_dropout(v, a, g):
    x, rate = v[0], a["rate"]
    if not a["training"] or rate == 0.0:
        return x, None
    keep = g.rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def _bw_dropout(gr, v, out, c, a):
    if c is None:
        return (gr,)
    return (gr * c,)


_OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (_fw_add, _bw_add),
    "sub": (_fw_sub, _bw_sub),
    "mul": (_fw_mul, _bw_mul),
    "scale": (_fw_scale, _bw_scale),
    "linear": (_fw_linear, _bw_linear),
    "tanh": (_fw_tanh, _bw_tanh),
    "sigmoid": (_fw_sigmoid, _bw_sigmoid),
    "relu": (_fw_relu, _bw_relu),
    "exp": (_fw_exp, _bw_exp),
    "log": (_fw_log, _bw_log),
    "square": (_fw_square, _bw_square),
    "clip": (_fw_clip, _bw_clip),
    "softmax": (_fw_softmax, _bw_softmax),
    "log_softmax": (_fw_log_softmax, _bw_log_softmax),
    "sum": (_fw_sum, _bw_sum),
    "mean": (_fw_mean, _bw_mean),
    "concat": (_fw_concat, _bw_concat),
    "stack": (_fw_stack, _bw_stack),
    "pick": (_fw_pick, _bw_pick),
    "row_scale": (_fw_row_scale, _bw_row_scale),
    "dropout": (_fw_dropout, _bw_dropout),
}


class Graph:
    """An append-only tape of operations.

    Args:
        seed: seed for the random stream used by dropout nodes.
    """

    def __init__(self, seed: int | np.random.Generator | None = 0):
        self.nodes: list[Node] = []
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._placeholders: dict[str, Node] = {}

    # leaves

    def leaf(self, value, name: str | None = None) -> Node:
        arr = _as_array(value)
        node = Node(self, len(self.nodes), "leaf", (), {"shape": arr.shape}, name, arr)
        self.nodes.append(node)
        return node

    def constant(self, value, name: str | None = None) -> Node:
        node = self.leaf(value, name)
        node.op = "const"
        return node

    def placeholder(self, name: str, shape: tuple) -> Node:
        if name in self._placeholders:
            raise ValueError(f"placeholder {name!r} already defined")
        node = Node(self, len(self.nodes), "placeholder", (), {"shape": tuple(shape)}, name)
        self.nodes.append(node)
        self._placeholders[name] = node
        return node

    # construction

    def _emit(self, op: str, inputs: tuple[Node, ...], shape: tuple, **attrs) -> Node:
        for x in inputs:
            if x.graph is not self:
                raise ValueError(f"{op}: input {x!r} belongs to another graph")
        attrs["shape"] = tuple(shape)
        node = Node(self, len(self.nodes), op, inputs, attrs)
        self.nodes.append(node)
        if all(x.value is not None for x in inputs):
            self._eval(node)
        return node

    def _eval(self, node: Node) -> None:
        fw = _OPS[node.op][0]
        value, cache = fw([x.value for x in node.inputs], node.attrs, self)
        node.value = np.asarray(value, dtype=np.float64)
        node.cache = cache

    def _same(self, op, x, y):
        if x.shape != y.shape:
            raise ShapeError(f"{op}: shapes {x.shape} and {y.shape} differ")

    def _lift(self, x) -> Node:
        return x if isinstance(x, Node) else self.constant(x)

    def _elementwise(self, op, x, y):
        x, y = self._lift(x), self._lift(y)
        if x.shape == y.shape:
            return self._emit(op, (x, y), x.shape)
        # (B, n) with an (n,) bias
        if len(x.shape) == 2 and y.shape == x.shape[1:]:
            return self._emit(op, (x, y), x.shape)
        if len(y.shape) == 2 and x.shape == y.shape[1:]:
            return self._emit(op, (x, y), y.shape)
        raise ShapeError(f"{op}: shapes {x.shape} and {y.shape} incompatible")

    def add(self, x, y) -> Node:
        return self._elementwise("add", x, y)

    def sub(self, x, y) -> Node:
        return self._elementwise("sub", x, y)

    def mul(self, x: Node, y: Node) -> Node:
        x, y = self._lift(x), self._lift(y)
        self._same("mul", x, y)
        return self._emit("mul", (x, y), x.shape)

    def scale(self, x: Node, k: float) -> Node:
        return self._emit("scale", (x,), x.shape, k=float(k))

    def linear(self, x: Node, w: Node, b: Node | None = None) -> Node:
        """``x @ w.T + b`` with ``w`` stored as (out, in)."""
        if len(w.shape) != 2 or len(x.shape) not in (1, 2) or x.shape[-1] != w.shape[1]:
            raise ShapeError(f"linear: input shape {x.shape} and weight shape {w.shape} incompatible")
        out = x.shape[:-1] + (w.shape[0],)
        if b is None:
            return self._emit("linear", (x, w), out)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear: bias shape {b.shape} and weight shape {w.shape} incompatible")
        return self._emit("linear", (x, w, b), out)

    def _unary(self, op, x, **attrs):
        return self._emit(op, (x,), x.shape, **attrs)

    def tanh(self, x):
        return self._unary("tanh", x)

    def sigmoid(self, x):
        return self._unary("sigmoid", x)

    def relu(self, x):
        return self._unary("relu", x)

    def exp(self, x):
        return self._unary("exp", x)

    def log(self, x):
        return self._unary("log", x)

    def square(self, x):
        return self._unary("square", x)

    def clip(self, x, lo: float, hi: float):
        return self._unary("clip", x, lo=float(lo), hi=float(hi))

    def softmax(self, x):
        return self._unary("softmax", x)

    def log_softmax(self, x):
        return self._unary("log_softmax", x)

    def sum(self, x):
        return self._emit("sum", (x,), ())

    def mean(self, x):
        return self._emit("mean", (x,), ())

    def concat(self, xs: list[Node]) -> Node:
        lead = {x.shape[:-1] for x in xs}
        if len(lead) != 1 or any(len(x.shape) == 0 for x in xs):
            raise ShapeError(f"concat: shapes {[x.shape for x in xs]} incompatible")
        width = sum(x.shape[-1] for x in xs)
        return self._emit("concat", tuple(xs), xs[0].shape[:-1] + (width,))

    def stack(self, xs: list[Node]) -> Node:
        """Stack equal-shaped scalars or (B,) vectors along a new last axis."""
        shapes = {x.shape for x in xs}
        if len(shapes) != 1 or len(xs[0].shape) > 1:
            raise ShapeError(f"stack: shapes {[x.shape for x in xs]} incompatible")
        return self._emit("stack", tuple(xs), xs[0].shape + (len(xs),))

    def pick(self, x: Node, index) -> Node:
        """Select ``x[index]`` from a vector, or ``x[b, index[b]]`` per row."""
        if len(x.shape) == 1:
            return self._emit("pick", (x,), (), index=int(index))
        idx = np.asarray(index, dtype=np.int64)
        if idx.ndim == 0:
            idx = np.full(x.shape[0], int(idx))
        if idx.shape != (x.shape[0],):
            raise ShapeError(f"pick: index shape {idx.shape} and input shape {x.shape} incompatible")
        return self._emit("pick", (x,), (x.shape[0],), index=idx)

    def row_scale(self, x: Node, s: Node) -> Node:
        """Scale each row of ``x`` by the matching entry of ``s``."""
        if s.shape != x.shape[:-1]:
            raise ShapeError(f"row_scale: shapes {x.shape} and {s.shape} incompatible")
        return self._emit("row_scale", (x, s), x.shape)

    def dropout(self, x: Node, rate: float, training: bool) -> Node:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        return self._unary("dropout", x, rate=float(rate), training=bool(training))

    # execution

    def forward(self, inputs: dict[str, np.ndarray] | None = None) -> None:
        """Bind placeholders and re-evaluate every non-leaf node in order."""
        inputs = inputs or {}
        unknown = set(inputs) - set(self._placeholders)
        if unknown:
            raise KeyError(f"no placeholder named {sorted(unknown)}")
        for name, node in self._placeholders.items():
            if name in inputs:
                arr = _as_array(inputs[name])
                if arr.shape != node.shape:
                    raise ShapeError(f"placeholder {name!r}: expected shape {node.shape}, got {arr.shape}")
                node.value = arr
            elif node.value is None:
                raise GraphStateError(f"placeholder {name!r} is unbound")
        for node in self.nodes:
            if node.op not in ("leaf", "const", "placeholder"):
                self._eval(node)

    def backward(self, output: Node, seed_grad=None) -> dict[int, np.ndarray]:
        """Propagate ``seed_grad`` from ``output`` back through the tape.

        Returns a mapping node id -> gradient for every node reached. Leaf
        and placeholder nodes also get ``.grad`` set (zeros if unreached).
        """
        if output.graph is not self:
            raise ValueError("output node belongs to another graph")
        if output.value is None:
            raise GraphStateError("backward called before forward: output has no value")
        if seed_grad is None:
            if output.value.size != 1:
                raise ShapeError(f"seed_grad required for non-scalar output of shape {output.shape}")
            seed = np.ones(output.shape)
        else:
            seed = _as_array(seed_grad)
            if seed.shape != output.shape:
                raise ShapeError(f"seed_grad shape {seed.shape} and output shape {output.shape} differ")
        grads: dict[int, np.ndarray] = {output.id: seed}
        for node in reversed(self.nodes[: output.id + 1]):
            gr = grads.get(node.id)
            if gr is None or not node.inputs:
                continue
            if any(x.value is None for x in node.inputs):
                raise GraphStateError(f"backward called before forward: node {node!r} unevaluated")
            bw = _OPS[node.op][1]
            parts = bw(gr, [x.value for x in node.inputs], node.value, node.cache, node.attrs)
            for x, dx in zip(node.inputs, parts):
                if x.id in grads:
                    grads[x.id] = grads[x.id] + dx
                else:
                    grads[x.id] = np.asarray(dx, dtype=np.float64)
        for node in self.nodes:
            if node.op in ("leaf", "placeholder"):
                g = grads.get(node.id)
                node.grad = np.zeros(node.shape) if g is None else g
        return grads

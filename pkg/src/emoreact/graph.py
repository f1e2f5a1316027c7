"""A small reverse-mode differentiation tape over float64 numpy values.

Nodes are recorded in creation order, which is a valid topological order.
Values are computed eagerly while the graph is built; :func:`forward`
re-runs the whole tape (e.g. after new inputs or perturbed parameters) and
:func:`backward` fills the adjoint of every node.

Node values may be scalars (0-d arrays) or arrays.  The free functions at
the bottom (``tanh``, ``matmul``, ...) accept either nodes or plain arrays,
so model code can run with or without a tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class TapeError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _sigmoid(x):
    # split by sign to stay finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x, axis):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# Each op is (forward(values, aux) -> value, backward(g, values, out, aux) -> parent grads).
# A parent gradient of None means "no contribution".

def _f_add(v, aux):
    return v[0] + v[1]


def _b_add(g, v, out, aux):
    return _unbroadcast(g, np.shape(v[0])), _unbroadcast(g, np.shape(v[1]))


def _f_sub(v, aux):
    return v[0] - v[1]


def _b_sub(g, v, out, aux):
    return _unbroadcast(g, np.shape(v[0])), _unbroadcast(-g, np.shape(v[1]))


def _f_mul(v, aux):
    return v[0] * v[1]


def _b_mul(g, v, out, aux):
    return _unbroadcast(g * v[1], np.shape(v[0])), _unbroadcast(g * v[0], np.shape(v[1]))


def _f_div(v, aux):
    return v[0] / v[1]


def _b_div(g, v, out, aux):
    return (_unbroadcast(g / v[1], np.shape(v[0])),
            _unbroadcast(-g * v[0] / (v[1] * v[1]), np.shape(v[1])))


def _f_neg(v, aux):
    return -v[0]


def _b_neg(g, v, out, aux):
    return (-g,)


def _f_exp(v, aux):
    return np.exp(v[0])


def _b_exp(g, v, out, aux):
    return (g * out,)


def _f_log(v, aux):
    return np.log(v[0])


def _b_log(g, v, out, aux):
    return (g / v[0],)


def _f_tanh(v, aux):
    return np.tanh(v[0])


def _b_tanh(g, v, out, aux):
    return (g * (1.0 - out * out),)


def _f_sigmoid(v, aux):
    return _sigmoid(np.asarray(v[0], dtype=np.float64))


def _b_sigmoid(g, v, out, aux):
    return (g * out * (1.0 - out),)


def _f_maxc(v, aux):
    return np.maximum(v[0], aux)


def _b_maxc(g, v, out, aux):
    # subgradient 0 at the kink
    return (g * (v[0] > aux),)


def _f_matmul(v, aux):
    return v[0] @ v[1]


def _b_matmul(g, v, out, aux):
    a, b = v
    return g @ b.T, a.T @ g


def _f_sum(v, aux):
    axis, keepdims = aux
    return np.sum(v[0], axis=axis, keepdims=keepdims)


def _b_sum(g, v, out, aux):
    axis, keepdims = aux
    shape = np.shape(v[0])
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


def _f_index(v, aux):
    return v[0][aux]


def _is_basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in parts)


def _b_index(g, v, out, aux):
    grad = np.zeros_like(v[0], dtype=np.float64)
    if _is_basic_key(aux):
        grad[aux] += g
    else:
        # fancy indices may repeat
        np.add.at(grad, aux, g)
    return (grad,)


def _f_concat(v, aux):
    return np.concatenate(v, axis=aux)


def _b_concat(g, v, out, aux):
    bounds = np.cumsum([np.shape(x)[aux] for x in v])[:-1]
    return tuple(np.split(g, bounds, axis=aux))


def _f_softmax(v, aux):
    return _softmax(v[0], aux)


def _b_softmax(g, v, out, aux):
    return (out * (g - np.sum(g * out, axis=aux, keepdims=True)),)


def _f_reshape(v, aux):
    return np.reshape(v[0], aux)


def _b_reshape(g, v, out, aux):
    return (np.reshape(g, np.shape(v[0])),)


OPS = {
    "add": (_f_add, _b_add),
    "sub": (_f_sub, _b_sub),
    "mul": (_f_mul, _b_mul),
    "div": (_f_div, _b_div),
    "neg": (_f_neg, _b_neg),
    "exp": (_f_exp, _b_exp),
    "log": (_f_log, _b_log),
    "tanh": (_f_tanh, _b_tanh),
    "sigmoid": (_f_sigmoid, _b_sigmoid),
    "maxc": (_f_maxc, _b_maxc),
    "matmul": (_f_matmul, _b_matmul),
    "sum": (_f_sum, _b_sum),
    "index": (_f_index, _b_index),
    "concat": (_f_concat, _b_concat),
    "softmax": (_f_softmax, _b_softmax),
    "reshape": (_f_reshape, _b_reshape),
}

LEAF_KINDS = ("input", "parameter", "const")


class Node:
    __slots__ = ("tape", "index", "op", "parents", "aux", "value", "grad", "name")
    # make numpy defer to the reflected operators, e.g. ndarray * Node
    __array_ufunc__ = None

    def __init__(self, tape, op, parents, aux, value, name=None):
        self.tape = tape
        self.index = len(tape.nodes)
        self.op = op
        self.parents = parents
        self.aux = aux
        self.value = value
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Node #{self.index} {self.op}{label} shape={self.shape}>"

    def _lift(self, other):
        return other if isinstance(other, Node) else self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.tape.apply("mul", self._lift(other), self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, self._lift(other))

    def __rtruediv__(self, other):
        return self.tape.apply("div", self._lift(other), self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._lift(other))

    def __getitem__(self, key):
        return self.tape.apply("index", self, aux=key)

    def sum(self, axis=None, keepdims=False):
        return self.tape.apply("sum", self, aux=(axis, keepdims))

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.shape[axis]
        return self.sum(axis) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape.apply("reshape", self, aux=tuple(shape))

    def item(self) -> float:
        return float(self.value)


def _as_float(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: list[Node] = []
        self.parameters: list[Node] = []
        self._param_ids: dict[int, Node] = {}
        self.output: Node | None = None
        self._forwarded = False

    def __len__(self):
        return len(self.nodes)

    def _add(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def input(self, value, name: str | None = None) -> Node:
        node = self._add(Node(self, "input", (), None, _as_float(value), name))
        self.inputs.append(node)
        self._forwarded = True
        return node

    def parameter(self, array: np.ndarray, name: str | None = None) -> Node:
        """Register ``array`` (by reference, not copied) as a parameter leaf.

        Registering the same array twice returns the same node.
        """
        if not isinstance(array, np.ndarray) or array.dtype != np.float64:
            raise TypeError("parameters must be float64 numpy arrays")
        key = id(array)
        if key in self._param_ids:
            return self._param_ids[key]
        node = self._add(Node(self, "parameter", (), None, array, name))
        self.parameters.append(node)
        self._param_ids[key] = node
        self._forwarded = True
        return node

    def const(self, value, name: str | None = None) -> Node:
        return self._add(Node(self, "const", (), None, _as_float(value), name))

    def apply(self, op: str, *parents: Node, aux=None) -> Node:
        for p in parents:
            if p.tape is not self:
                raise TapeError("cannot mix nodes from different tapes")
        fwd, _ = OPS[op]
        value = fwd([p.value for p in parents], aux)
        node = self._add(Node(self, op, parents, aux, _as_float(value)))
        self.output = node
        return node

    # -- evaluation --------------------------------------------------------

    def _set_inputs(self, inputs):
        if inputs is None:
            return
        if isinstance(inputs, dict):
            items = list(inputs.items())
            by_name = {n.name: n for n in self.inputs}
            for key, value in items:
                node = key if isinstance(key, Node) else by_name.get(key)
                if node is None:
                    raise TapeError(f"unknown input {key!r}")
                self._assign_input(node, value)
            return
        values = list(inputs) if not np.isscalar(inputs) else [inputs]
        if len(values) != len(self.inputs):
            raise TapeError(f"tape has {len(self.inputs)} inputs, got {len(values)} values")
        for node, value in zip(self.inputs, values):
            self._assign_input(node, value)

    @staticmethod
    def _assign_input(node: Node, value):
        value = _as_float(value)
        if np.isnan(value).any():
            raise ValueError(f"NaN in input {node.name or node.index}")
        if value.shape != node.value.shape:
            raise TapeError(f"input {node.name or node.index} expects shape {node.value.shape}, got {value.shape}")
        node.value = value

    def forward(self, inputs=None, output: Node | None = None) -> float:
        self._set_inputs(inputs)
        for node in self.nodes:
            if node.op in LEAF_KINDS:
                continue
            fwd, _ = OPS[node.op]
            node.value = _as_float(fwd([p.value for p in node.parents], node.aux))
        self._forwarded = True
        out = output or self.output
        if out is None:
            raise TapeError("tape has no output node")
        return float(out.value) if out.value.ndim == 0 else out.value

    def backward(self, output: Node | None = None) -> list[np.ndarray]:
        """Reverse sweep from a scalar output.  Returns parameter gradients."""
        out = output or self.output
        if out is None or not self._forwarded:
            raise TapeError("backward() called before forward()")
        if out.value.ndim != 0 and out.value.size != 1:
            raise TapeError("backward() needs a scalar output")
        for node in self.nodes:
            node.grad = None
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes[: out.index + 1]):
            g = node.grad
            if g is None or node.op in LEAF_KINDS:
                continue
            _, bwd = OPS[node.op]
            grads = bwd(g, [p.value for p in node.parents], node.value, node.aux)
            for parent, pg in zip(node.parents, grads):
                if pg is None or parent.op == "const":
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
        return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in self.parameters]

    def gradients(self) -> dict[str, np.ndarray]:
        return {(p.name or f"param{i}"): (p.grad if p.grad is not None else np.zeros_like(p.value))
                for i, p in enumerate(self.parameters)}


def forward(tape: Tape, inputs=None) -> float:
    return tape.forward(inputs)


def backward(tape: Tape) -> list[np.ndarray]:
    return tape.backward()


# ---------------------------------------------------------------------------
# Finite-difference checking


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    worst_parameter: str | None = None
    worst_index: tuple | None = None
    checked: int = 0
    errors: dict[str, float] = field(default_factory=dict)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def rel_error(g_ad: float, g_fd: float) -> float:
    return abs(g_ad - g_fd) / (abs(g_ad) + abs(g_fd) + 1e-8)


def flat_parameters(tape: Tape) -> np.ndarray:
    if not tape.parameters:
        return np.zeros(0)
    return np.concatenate([p.value.ravel() for p in tape.parameters])


def set_flat_parameters(tape: Tape, point: np.ndarray) -> None:
    point = np.asarray(point, dtype=np.float64)
    total = sum(p.value.size for p in tape.parameters)
    if point.size != total:
        raise TapeError(f"point has {point.size} entries, tape has {total} parameter entries")
    offset = 0
    for p in tape.parameters:
        n = p.value.size
        p.value[...] = point[offset:offset + n].reshape(p.value.shape)
        offset += n


def finite_diff_check(tape: Tape, point=None, h: float = 1e-5, max_entries: int | None = None,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences.

    ``point`` optionally overwrites the flat parameter vector first.  With
    ``max_entries`` only a random subset of entries per parameter is probed.
    Parameter arrays are restored afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    report = GradCheckReport()
    if not tape.parameters:
        return report
    if point is not None:
        set_flat_parameters(tape, point)
    tape.forward()
    grads = tape.backward()
    rng = rng or np.random.default_rng(0)
    for i, (node, grad) in enumerate(zip(tape.parameters, grads)):
        name = node.name or f"param{i}"
        arr = node.value
        entries = list(np.ndindex(arr.shape))
        if max_entries is not None and len(entries) > max_entries:
            picks = rng.choice(len(entries), size=max_entries, replace=False)
            entries = [entries[k] for k in sorted(picks)]
        worst = 0.0
        for idx in entries:
            saved = arr[idx]
            arr[idx] = saved + h
            f_plus = tape.forward()
            arr[idx] = saved - h
            f_minus = tape.forward()
            arr[idx] = saved
            g_fd = (f_plus - f_minus) / (2.0 * h)
            err = rel_error(float(grad[idx]), g_fd)
            report.checked += 1
            worst = max(worst, err)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst_parameter = name
                report.worst_index = idx
        report.errors[name] = worst
    tape.forward()
    tape.backward()
    return report


# ---------------------------------------------------------------------------
# Functions usable on nodes and on plain arrays


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _lift(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.const(x)


def _unary(op: str, x, fn):
    if isinstance(x, Node):
        return x.tape.apply(op, x)
    return fn(_as_float(x))


def exp(x):
    return _unary("exp", x, np.exp)


def log(x):
    return _unary("log", x, np.log)


def tanh(x):
    return _unary("tanh", x, np.tanh)


def sigmoid(x):
    return _unary("sigmoid", x, _sigmoid)


def maximum(x, c: float):
    """max(x, c) for a constant ``c``."""
    if isinstance(x, Node):
        return x.tape.apply("maxc", x, aux=float(c))
    return np.maximum(x, c)


def matmul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return np.asarray(a) @ np.asarray(b)
    return tape.apply("matmul", _lift(tape, a), _lift(tape, b))


def concat(xs: Sequence, axis: int = -1):
    tape = _tape_of(*xs)
    if tape is None:
        return np.concatenate(xs, axis=axis)
    if axis < 0:
        axis += np.ndim(xs[0].value if isinstance(xs[0], Node) else xs[0])
    return tape.apply("concat", *[_lift(tape, x) for x in xs], aux=axis)


def softmax(x, axis: int = -1):
    if isinstance(x, Node):
        return x.tape.apply("softmax", x, aux=axis)
    return _softmax(_as_float(x), axis)


def take_rows(table, ids):
    """Row gather ``table[ids]``, the embedding lookup."""
    ids = np.asarray(ids, dtype=np.intp)
    if isinstance(table, Node):
        return table.tape.apply("index", table, aux=ids)
    return table[ids]


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x)

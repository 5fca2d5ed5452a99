"""Reverse-mode differentiation on an append-only tape.

Expressions are symbolic handles into a :class:`Tape`.  :func:`derive` does
not compute numbers; it appends the gradient computation to the same tape and
returns new expressions.  Those can be differentiated again, which is what
makes the derivative of an SGD step with respect to its training sample
available.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

Tensor = np.ndarray


class AutodiffError(Exception):
    """Base class for graph construction and evaluation errors."""


class ShapeError(AutodiffError, ValueError):
    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        shown = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class TapeMismatchError(AutodiffError, ValueError):
    pass


class UnboundLeafError(AutodiffError, KeyError):
    def __init__(self, node: int):
        self.node = node
        super().__init__(f"leaf node {node} has no bound value")

    def __str__(self) -> str:
        return self.args[0]


class NonFiniteError(AutodiffError, FloatingPointError):
    def __init__(self, node: int, op: str):
        self.node = node
        self.op = op
        super().__init__(f"non-finite value produced at node {node} ({op})")


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    shape: tuple[int, ...]
    payload: Any = None


@dataclass
class Tape:
    """Append-only list of operation nodes."""

    nodes: list[_Node] = field(default_factory=list)
    _ancestry: dict[tuple[int, ...], list[int]] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, op: str, parents: Sequence[Expr], shape, payload=None) -> Expr:
        for p in parents:
            if p.tape is not self:
                raise TapeMismatchError(f"{op}: operand belongs to a different tape")
        node = _Node(op, tuple(p.id for p in parents), tuple(shape), payload)
        self.nodes.append(node)
        return Expr(self, len(self.nodes) - 1, node.shape)

    def ancestors(self, ids: Iterable[int]) -> list[int]:
        """Sorted ids of every node the given nodes depend on (inclusive)."""
        key = tuple(sorted(set(ids)))
        cached = self._ancestry.get(key)
        if cached is not None:
            return cached
        seen: set[int] = set()
        stack = list(key)
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.nodes[i].parents)
        order = sorted(seen)
        self._ancestry[key] = order
        return order


@dataclass(frozen=True, eq=False)
class Expr:
    tape: Tape
    id: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def op(self) -> str:
        return self.tape.nodes[self.id].op

    def __repr__(self) -> str:
        return f"Expr(id={self.id}, op={self.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    def __radd__(self, other):
        return add(_lift(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _lift(self.tape, other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, _lift(self.tape, other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(tape: Tape, value) -> Expr:
    if isinstance(value, Expr):
        return value
    return const(tape, value)


def _as_tensor(value) -> Tensor:
    return np.array(value, dtype=np.float64)


# ---------------------------------------------------------------------------
# node constructors
# ---------------------------------------------------------------------------

def leaf(tape: Tape, value=None, *, shape=None) -> Expr:
    """Input node.  ``value`` is its default binding; pass ``shape`` alone for
    a placeholder that must be bound at evaluation time."""
    if value is None:
        if shape is None:
            raise ValueError("leaf needs a value or a shape")
        return tape._append("leaf", (), tuple(shape), None)
    arr = _as_tensor(value)
    if shape is not None and tuple(shape) != arr.shape:
        raise ShapeError("leaf", tuple(shape), arr.shape)
    return tape._append("leaf", (), arr.shape, arr)


def const(tape: Tape, value) -> Expr:
    """Constant node; never receives a gradient."""
    arr = _as_tensor(value)
    return tape._append("const", (), arr.shape, arr)


def _zeros(tape: Tape, shape) -> Expr:
    return tape._append("zeros", (), tuple(shape), None)


def _binary_shape(op: str, a: Expr, b: Expr) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if a.shape == ():
        return b.shape
    if b.shape == ():
        return a.shape
    raise ShapeError(op, a.shape, b.shape)


def add(a: Expr, b: Expr) -> Expr:
    return a.tape._append("add", (a, b), _binary_shape("add", a, b))


def sub(a: Expr, b: Expr) -> Expr:
    return a.tape._append("sub", (a, b), _binary_shape("sub", a, b))


def mul(a: Expr, b: Expr) -> Expr:
    return a.tape._append("mul", (a, b), _binary_shape("mul", a, b))


def div(a: Expr, b: Expr) -> Expr:
    return a.tape._append("div", (a, b), _binary_shape("div", a, b))


def scale(a: Expr, c: float) -> Expr:
    return a.tape._append("scale", (a,), a.shape, float(c))


def shift(a: Expr, c: float) -> Expr:
    """``a + c`` for a python constant ``c``."""
    return a.tape._append("shift", (a,), a.shape, float(c))


def relu(a: Expr) -> Expr:
    return a.tape._append("relu", (a,), a.shape)


def tanh(a: Expr) -> Expr:
    return a.tape._append("tanh", (a,), a.shape)


def square(a: Expr) -> Expr:
    return a.tape._append("square", (a,), a.shape)


def sqrt(a: Expr) -> Expr:
    return a.tape._append("sqrt", (a,), a.shape)


def arccos(a: Expr) -> Expr:
    return a.tape._append("arccos", (a,), a.shape)


def clip(a: Expr, lo: float, hi: float) -> Expr:
    return a.tape._append("clip", (a,), a.shape, (float(lo), float(hi)))


def _step(a: Expr) -> Expr:
    # indicator of a > 0; treated as locally constant
    return a.tape._append("step", (a,), a.shape)


def _inside(a: Expr, lo: float, hi: float) -> Expr:
    return a.tape._append("inside", (a,), a.shape, (lo, hi))


def sum(a: Expr, axis: int | None = None) -> Expr:  # noqa: A001
    if axis is None:
        return a.tape._append("sum", (a,), (), None)
    axis = _norm_axis(a.shape, axis)
    shape = a.shape[:axis] + a.shape[axis + 1:]
    return a.tape._append("sum", (a,), shape, axis)


def mean(a: Expr) -> Expr:
    return a.tape._append("mean", (a,), ())


def broadcast(a: Expr, shape, axis: int | None = None) -> Expr:
    """Inverse of :func:`sum`: repeat a scalar to ``shape`` (``axis=None``) or
    repeat along a new ``axis``."""
    shape = tuple(shape)
    if axis is None:
        if a.shape != ():
            raise ShapeError("broadcast", a.shape, shape)
    else:
        axis = _norm_axis(shape, axis)
        if shape[:axis] + shape[axis + 1:] != a.shape:
            raise ShapeError("broadcast", a.shape, shape)
    return a.tape._append("broadcast", (a,), shape, axis)


def matmul(a: Expr, b: Expr) -> Expr:
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a.tape._append("matmul", (a, b), (a.shape[0], b.shape[1]))


def transpose(a: Expr) -> Expr:
    if len(a.shape) != 2:
        raise ShapeError("transpose", a.shape)
    return a.tape._append("transpose", (a,), a.shape[::-1])


def reshape(a: Expr, shape) -> Expr:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError("reshape", a.shape, shape)
    return a.tape._append("reshape", (a,), shape)


def _norm_axis(shape, axis: int) -> int:
    nd = len(shape)
    if not -nd <= axis < nd:
        raise ShapeError(f"axis {axis}", tuple(shape))
    return axis % nd


# ---------------------------------------------------------------------------
# numeric kernels
# ---------------------------------------------------------------------------

def _forward(node: _Node, args: list[Tensor]) -> Tensor:
    op = node.op
    if op == "add":
        return args[0] + args[1]
    if op == "sub":
        return args[0] - args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "div":
        return args[0] / args[1]
    if op == "scale":
        return args[0] * node.payload
    if op == "shift":
        return args[0] + node.payload
    if op == "relu":
        return np.maximum(args[0], 0.0)
    if op == "tanh":
        return np.tanh(args[0])
    if op == "square":
        return args[0] * args[0]
    if op == "sqrt":
        return np.sqrt(args[0])
    if op == "arccos":
        return np.arccos(args[0])
    if op == "clip":
        return np.clip(args[0], *node.payload)
    if op == "step":
        return (args[0] > 0.0).astype(np.float64)
    if op == "inside":
        lo, hi = node.payload
        return ((args[0] >= lo) & (args[0] <= hi)).astype(np.float64)
    if op == "sum":
        return np.asarray(np.sum(args[0], axis=node.payload), dtype=np.float64)
    if op == "mean":
        return np.asarray(np.mean(args[0]), dtype=np.float64)
    if op == "broadcast":
        x = args[0] if node.payload is None else np.expand_dims(args[0], node.payload)
        return np.ascontiguousarray(np.broadcast_to(x, node.shape))
    if op == "matmul":
        return args[0] @ args[1]
    if op == "transpose":
        return np.ascontiguousarray(args[0].T)
    if op == "reshape":
        return args[0].reshape(node.shape)
    if op == "zeros":
        return np.zeros(node.shape)
    raise AutodiffError(f"unknown op {op!r}")


def evaluate(
    exprs: Sequence[Expr],
    bindings: Mapping[Expr, Any] | None = None,
    *,
    memo: dict[int, Tensor] | None = None,
) -> list[Tensor]:
    """Numeric values of ``exprs``.

    ``bindings`` overrides leaf values.  ``memo`` (node id -> value) is read
    and filled, so repeated calls on one graph with the same bindings can
    share work; callers must not reuse a memo across different bindings.
    """
    exprs = list(exprs)
    if not exprs:
        return []
    tape = exprs[0].tape
    for e in exprs:
        if e.tape is not tape:
            raise TapeMismatchError("evaluate: expressions from different tapes")
    bound: dict[int, Tensor] = {}
    for k, v in (bindings or {}).items():
        if k.tape is not tape:
            raise TapeMismatchError("evaluate: binding for a node on another tape")
        if tape.nodes[k.id].op != "leaf":
            raise AutodiffError(f"evaluate: node {k.id} is not a leaf")
        arr = _as_tensor(v)
        if arr.shape != k.shape:
            raise ShapeError("bind", k.shape, arr.shape)
        bound[k.id] = arr
    values = memo if memo is not None else {}
    nodes = tape.nodes
    for i in tape.ancestors(e.id for e in exprs):
        if i in values:
            continue
        node = nodes[i]
        if node.op == "leaf":
            v = bound.get(i, node.payload)
            if v is None:
                raise UnboundLeafError(i)
        elif node.op == "const":
            v = node.payload
        else:
            v = np.asarray(_forward(node, [values[p] for p in node.parents]))
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(i, node.op)
        values[i] = v
    return [values[e.id] for e in exprs]


# ---------------------------------------------------------------------------
# symbolic reverse sweep
# ---------------------------------------------------------------------------

def _unbroadcast(g: Expr, shape) -> Expr:
    if g.shape == tuple(shape):
        return g
    return sum(g)  # scalar operand broadcast against a tensor


def _vjp(tape: Tape, i: int, g: Expr, need: Sequence[bool]) -> list[Expr | None]:
    """Gradient contributions of node ``i`` to each parent, as tape nodes.

    Parents with ``need[k]`` false get ``None`` and no nodes are built for them.
    """
    node = tape.nodes[i]
    op = node.op
    ps = [Expr(tape, p, tape.nodes[p].shape) for p in node.parents]
    out = Expr(tape, i, node.shape)

    def pick(*makers):
        return [m() if n else None for m, n in zip(makers, need)]

    if op == "add":
        return pick(lambda: _unbroadcast(g, ps[0].shape), lambda: _unbroadcast(g, ps[1].shape))
    if op == "sub":
        return pick(
            lambda: _unbroadcast(g, ps[0].shape),
            lambda: _unbroadcast(scale(g, -1.0), ps[1].shape),
        )
    if op == "mul":
        a, b = ps
        return pick(
            lambda: _unbroadcast(mul(g, b), a.shape),
            lambda: _unbroadcast(mul(g, a), b.shape),
        )
    if op == "div":
        a, b = ps
        ga = div(g, b)
        # -g a / b^2 == -(g/b) * (a/b)
        return pick(
            lambda: _unbroadcast(ga, a.shape),
            lambda: _unbroadcast(scale(mul(ga, out), -1.0), b.shape),
        )
    if op == "matmul":
        a, b = ps
        return pick(lambda: matmul(g, transpose(b)), lambda: matmul(transpose(a), g))
    if op == "scale":
        return [scale(g, node.payload)]
    if op == "shift":
        return [g]
    if op == "relu":
        return [mul(g, _step(ps[0]))]
    if op == "tanh":
        return [mul(g, shift(scale(square(out), -1.0), 1.0))]
    if op == "square":
        return [scale(mul(g, ps[0]), 2.0)]
    if op == "sqrt":
        return [div(g, scale(out, 2.0))]
    if op == "arccos":
        return [scale(div(g, sqrt(shift(scale(square(ps[0]), -1.0), 1.0))), -1.0)]
    if op == "clip":
        return [mul(g, _inside(ps[0], *node.payload))]
    if op in ("step", "inside"):
        return [None]
    if op == "sum":
        return [broadcast(g, ps[0].shape, node.payload)]
    if op == "mean":
        n = ps[0].size
        return [scale(broadcast(g, ps[0].shape), 1.0 / n)]
    if op == "broadcast":
        return [sum(g, node.payload)]
    if op == "transpose":
        return [transpose(g)]
    if op == "reshape":
        return [reshape(g, ps[0].shape)]
    raise AutodiffError(f"no gradient rule for {op!r}")


def derive(output: Expr, wrt: Sequence[Expr]) -> list[Expr]:
    """Symbolic gradients of scalar ``output`` with respect to each of ``wrt``.

    Nodes that ``output`` does not depend on get a zero expression.
    """
    if output.shape != ():
        raise ShapeError("derive (output must be scalar)", output.shape)
    tape = output.tape
    for w in wrt:
        if w.tape is not tape:
            raise TapeMismatchError("derive: wrt node on a different tape")
    nodes = tape.nodes
    anc = tape.ancestors([output.id])
    targets = {w.id for w in wrt}
    # restrict the sweep to nodes lying on a path wrt -> output
    live: set[int] = set()
    for i in anc:
        if i in targets or any(p in live for p in nodes[i].parents):
            live.add(i)
    pending: dict[int, list[Expr]] = {output.id: [const(tape, 1.0)]}
    grads: dict[int, Expr] = {}
    for i in reversed(anc):
        if i not in live or i not in pending:
            continue
        parts = pending.pop(i)
        g = parts[0]
        for part in parts[1:]:
            g = add(g, part)
        grads[i] = g
        if not nodes[i].parents:
            continue
        parents = nodes[i].parents
        contribs = _vjp(tape, i, g, [p in live for p in parents])
        for p, c in zip(parents, contribs):
            if c is not None:
                pending.setdefault(p, []).append(c)
    return [grads[w.id] if w.id in grads else _zeros(tape, w.shape) for w in wrt]

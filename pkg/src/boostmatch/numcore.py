"""Dense float64 matrices, a small reverse-mode gradient engine, seeded RNG.

Matrices are plain 2-D ``numpy.float64`` arrays.  Graphs are recorded by
running ordinary Python code over :class:`Node` objects (define-by-run);
a :class:`Graph` wraps such a builder so it can be re-evaluated against
different leaf bindings.

Randomness: every stream is ``numpy.random.Generator(PCG64(SeedSequence(
[seed, *tags])))``.  PCG64 and SeedSequence are specified bit-for-bit by
numpy, so a ``(seed, tags)`` pair reproduces on every platform.  String tags
are mapped to integers with CRC-32 of their UTF-8 bytes.
"""
from __future__ import annotations

import zlib
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "ShapeError", "NumericError", "Node", "Graph", "as_matrix", "const", "leaf",
    "matmul", "add", "sub", "mul", "square", "hinge", "tanh", "exp",
    "row_softmax", "row_normalize", "row_sum", "col_sum", "row_mean",
    "col_mean", "total_sum", "affine", "transpose", "detach", "backward",
    "evaluate", "gradient", "finite_diff_check", "kink_distance", "make_rng",
]


class ShapeError(ValueError):
    """Inconsistent operand shapes, or a structurally invalid graph."""


class NumericError(ArithmeticError):
    """A NaN or Inf appeared in a leaf or an intermediate value."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"{name}: expected at most 2 dimensions, got {a.ndim}")
    if not np.isfinite(a).all():
        raise NumericError(f"{name}: non-finite entries")
    return a


class Node:
    """One value in a recorded computation.

    ``parents`` pairs each input node with a function mapping the upstream
    gradient to that input's gradient contribution.
    """

    __slots__ = ("value", "parents", "op", "requires_grad")
    __array_ufunc__ = None  # make ndarray <op> Node defer to Node's reflected operators

    def __init__(self, value: np.ndarray, parents=(), op: str = "leaf",
                 requires_grad: bool = False):
        self.value = value
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in self.parents)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node({self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def leaf(x, name: str = "leaf") -> Node:
    """A differentiable input."""
    return Node(as_matrix(x, name), op=name, requires_grad=True)


def const(x, name: str = "const") -> Node:
    return Node(as_matrix(x, name), op=name)


def _node(x) -> Node:
    if isinstance(x, Node):
        return x
    return const(x)


def detach(x) -> Node:
    """Same value, no gradient path back to ``x``."""
    return const(_node(x).value, "detach")


def _out(op: str, value: np.ndarray, parents) -> Node:
    if not np.isfinite(value).all():
        raise NumericError(f"{op}: non-finite output")
    parents = [(p, fn) for p, fn in parents if p.requires_grad]
    return Node(value, parents, op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Node, b: Node) -> None:
    for ra, rb in zip(a.shape, b.shape):
        if ra != rb and ra != 1 and rb != 1:
            raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


# -- primitive operations ----------------------------------------------------

def matmul(a, b) -> Node:
    a, b = _node(a), _node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _out("matmul", av @ bv, [
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    ])


def add(a, b) -> Node:
    a, b = _node(a), _node(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _out("add", a.value + b.value, [
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: _unbroadcast(g, sb)),
    ])


def sub(a, b) -> Node:
    a, b = _node(a), _node(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _out("sub", a.value - b.value, [
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: -_unbroadcast(g, sb)),
    ])


def mul(a, b) -> Node:
    """Elementwise product (with row/column broadcasting)."""
    a, b = _node(a), _node(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _out("mul", av * bv, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def square(a) -> Node:
    a = _node(a)
    av = a.value
    return _out("square", av * av, [(a, lambda g: 2.0 * av * g)])


def hinge(a) -> Node:
    """[x]+ ; the subgradient at exactly 0 is 0."""
    a = _node(a)
    mask = a.value > 0.0
    return _out("hinge", np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def tanh(a) -> Node:
    a = _node(a)
    y = np.tanh(a.value)
    return _out("tanh", y, [(a, lambda g: g * (1.0 - y * y))])


def exp(a) -> Node:
    a = _node(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return _out("exp", y, [(a, lambda g: g * y)])


def row_softmax(a, temperature: float = 1.0) -> Node:
    """softmax(temperature * row) for each row, max-subtracted."""
    a = _node(a)
    z = temperature * a.value
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return temperature * y * (g - (g * y).sum(axis=1, keepdims=True))

    return _out("row_softmax", y, [(a, back)])


def row_normalize(a) -> Node:
    """Divide each row by its L2 norm; all-zero rows stay zero (zero gradient)."""
    a = _node(a)
    x = a.value
    # scale by the row max so tiny or huge rows neither underflow nor overflow
    big = np.abs(x).max(axis=1, keepdims=True)
    big_safe = np.where(big > 0.0, big, 1.0)
    norm = big * np.sqrt(((x / big_safe) ** 2).sum(axis=1, keepdims=True))
    safe = np.where(norm > 0.0, norm, 1.0)
    y = np.where(norm > 0.0, x / safe, 0.0)

    def back(g):
        proj = (g * y).sum(axis=1, keepdims=True)
        return np.where(norm > 0.0, (g - y * proj) / safe, 0.0)

    return _out("row_normalize", y, [(a, back)])


def row_sum(a) -> Node:
    """Sum across columns: (R, C) -> (R, 1)."""
    a = _node(a)
    shape = a.shape
    return _out("row_sum", a.value.sum(axis=1, keepdims=True),
                [(a, lambda g: np.broadcast_to(g, shape).copy())])


def col_sum(a) -> Node:
    """Sum down rows: (R, C) -> (1, C)."""
    a = _node(a)
    shape = a.shape
    return _out("col_sum", a.value.sum(axis=0, keepdims=True),
                [(a, lambda g: np.broadcast_to(g, shape).copy())])


def row_mean(a) -> Node:
    a = _node(a)
    return affine(row_sum(a), 1.0 / a.shape[1])


def col_mean(a) -> Node:
    a = _node(a)
    return affine(col_sum(a), 1.0 / a.shape[0])


def total_sum(a) -> Node:
    a = _node(a)
    shape = a.shape
    return _out("total_sum", np.array([[a.value.sum()]]),
                [(a, lambda g: np.full(shape, g[0, 0]))])


def affine(a, scale: float, shift: float = 0.0) -> Node:
    """scale * a + shift with scalar constants."""
    a = _node(a)
    return _out("affine", scale * a.value + shift, [(a, lambda g: scale * g)])


def transpose(a) -> Node:
    a = _node(a)
    return _out("transpose", a.value.T.copy(), [(a, lambda g: g.T)])


# -- reverse accumulation ----------------------------------------------------

def _topo(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, _ in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node, wrt: Iterable[Node]) -> list[np.ndarray]:
    """Gradients of a scalar root with respect to each node in ``wrt``.

    Nodes the root does not depend on get an all-zero gradient.
    """
    if root.shape != (1, 1):
        raise ShapeError(f"backward: root must be 1x1, got {root.shape}")
    wrt = list(wrt)
    grads: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
    for node in reversed(_topo(root)):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, fn in node.parents:
            contrib = fn(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    return [grads.get(id(n), np.zeros(n.shape)).copy() for n in wrt]


class Graph:
    """A reusable computation: ``builder(**nodes) -> Node``.

    >>> g = Graph(lambda x: total_sum(hinge(x)))
    >>> float(evaluate(g, {"x": [[-1.0, 2.0]]})[0, 0])
    2.0
    """

    def __init__(self, builder: Callable[..., Node], name: str = "graph"):
        self.builder = builder
        self.name = name

    def trace(self, leaves: Mapping[str, object], wrt: Iterable[str] = ()):
        wrt = set(wrt)
        missing = wrt - set(leaves)
        if missing:
            raise ShapeError(f"{self.name}: unbound leaves {sorted(missing)}")
        nodes = {k: (leaf(v, k) if k in wrt else const(v, k)) for k, v in leaves.items()}
        root = _node(self.builder(**nodes))
        return root, nodes


def evaluate(graph: Graph, leaves: Mapping[str, object]) -> np.ndarray:
    root, _ = graph.trace(leaves)
    return root.value


def gradient(graph: Graph, leaves: Mapping[str, object], wrt: Iterable[str]) -> dict[str, np.ndarray]:
    wrt = list(wrt)
    root, nodes = graph.trace(leaves, wrt)
    grads = backward(root, [nodes[k] for k in wrt])
    return dict(zip(wrt, grads))


def finite_diff_check(graph: Graph, leaves: Mapping[str, object], wrt: Iterable[str],
                      step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Relative error per entry is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    wrt = list(wrt)
    leaves = {k: as_matrix(v, k).copy() for k, v in leaves.items()}
    analytic = gradient(graph, leaves, wrt)
    worst = 0.0
    for name in wrt:
        x = leaves[name]
        for idx in np.ndindex(*x.shape):
            orig = x[idx]
            x[idx] = orig + step
            fp = evaluate(graph, leaves)[0, 0]
            x[idx] = orig - step
            fm = evaluate(graph, leaves)[0, 0]
            x[idx] = orig
            numeric = (fp - fm) / (2.0 * step)
            a = analytic[name][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def kink_distance(graph: Graph, leaves: Mapping[str, object], wrt: Iterable[str]) -> float:
    """Smallest |input| over hinges that depend on ``wrt``; inf if none do."""
    root, _ = graph.trace(leaves, wrt)
    best = np.inf
    for node in _topo(root):
        if node.op == "hinge":
            for p, _ in node.parents:
                best = min(best, float(np.abs(p.value).min()))
    return best


# -- randomness --------------------------------------------------------------

def _tag(t) -> int:
    if isinstance(t, str):
        return zlib.crc32(t.encode("utf-8"))
    return int(t)


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *tags)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

"""Reverse-mode automatic differentiation over dense float64 tensors.

A Tape records every operation as it runs (define-by-run); backward() replays
it in reverse. Values are plain numpy float64 arrays held immutable once a
node owns them. Broadcasting is deliberately restricted: tensor/tensor ops
require exact shape matches, and the only broadcast forms are the explicit
row-wise ops (addrow / mulrow / rowscale) and scalar-node scaling. Everything
else raises ShapeError up front.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape", "Node", "ShapeError", "backward", "jacobian",
]


class ShapeError(ValueError):
    """Incompatible operand shapes for a tape operation."""

    def __init__(self, tag, *shapes):
        self.tag = tag
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"op '{tag}': incompatible shapes {self.shapes}")


def as_tensor(x):
    """Coerce to a C-contiguous float64 array (the tape's value type).
    0-d inputs stay 0-d (ascontiguousarray would promote them to 1-d)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim > 0 and not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    return a


class Node:
    """One recorded value on a tape.

    inputs reference parent nodes; vjp maps the upstream gradient to one
    gradient per input (None entries mean "no gradient flows there").
    """

    __slots__ = ("id", "tag", "inputs", "value", "vjp", "grad", "tape")

    def __init__(self, nid, tag, inputs, value, vjp, tape):
        self.id = nid
        self.tag = tag
        self.inputs = inputs
        self.value = value
        self.vjp = vjp
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, tag={self.tag!r}, shape={self.value.shape})"

    # Operator sugar; every overload routes through the tape's op functions.
    def __add__(self, other):
        return self.tape.add(self, self.tape.wrap(other))

    def __sub__(self, other):
        return self.tape.sub(self, self.tape.wrap(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.neg(self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)


class Tape:
    """Recording context for one forward pass; rebuilt every pass."""

    def __init__(self):
        self.nodes = []
        self._bound = {}  # id(param-array) -> leaf node, for parameter reuse

    # ---------------------------------------------------------------- basics

    def record(self, tag, inputs, value, vjp):
        """Append a node. Extension point for fused operations whose
        forward/backward are implemented outside this module."""
        for p in inputs:
            if p.tape is not self:
                raise ValueError(f"op '{tag}': input node from a different tape")
        value = as_tensor(value)
        value.flags.writeable = False
        node = Node(len(self.nodes), tag, list(inputs), value, vjp, self)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None):
        # Copy so freezing the node's value never freezes a caller's array.
        return self.record(name or "leaf", [], np.array(value, dtype=np.float64),
                           None)

    def wrap(self, x):
        if isinstance(x, Node):
            return x
        return self.leaf(x, name="const")

    def leaf_for(self, array, name=None):
        """Leaf bound to a parameter array, memoized so repeated forwards in
        one pass share a single node (gradients then accumulate correctly)."""
        key = id(array)
        node = self._bound.get(key)
        if node is None:
            node = self.leaf(array, name=name or "param")
            self._bound[key] = node
        return node

    def bound(self, array):
        """The leaf previously bound to this exact array object, or None."""
        return self._bound.get(id(array))

    # ------------------------------------------------------- elementwise ops

    def _check_same(self, tag, a, b):
        if a.value.shape != b.value.shape:
            raise ShapeError(tag, a.value.shape, b.value.shape)

    def add(self, a, b):
        self._check_same("add", a, b)
        return self.record("add", [a, b], a.value + b.value,
                           lambda g: (g, g))

    def sub(self, a, b):
        self._check_same("sub", a, b)
        return self.record("sub", [a, b], a.value - b.value,
                           lambda g: (g, -g))

    def mul(self, a, b):
        self._check_same("mul", a, b)
        return self.record("mul", [a, b], a.value * b.value,
                           lambda g: (g * b.value, g * a.value))

    def div(self, a, b):
        self._check_same("div", a, b)
        inv = 1.0 / b.value
        out = a.value * inv
        return self.record("div", [a, b], out,
                           lambda g: (g * inv, -g * out * inv))

    def neg(self, a):
        return self.record("neg", [a], -a.value, lambda g: (-g,))

    def scale(self, a, c):
        c = float(c)
        return self.record("scale", [a], c * a.value, lambda g: (c * g,))

    def scalar_mul(self, a, s):
        """a * s where s is a scalar-shaped node; broadcasts over all of a."""
        if s.value.shape != ():
            raise ShapeError("scalar_mul", a.value.shape, s.value.shape)
        return self.record(
            "scalar_mul", [a, s], a.value * s.value,
            lambda g: (g * s.value, np.asarray(np.sum(g * a.value))))

    # ------------------------------------------------------------ unary math

    def cos(self, a):
        return self.record("cos", [a], np.cos(a.value),
                           lambda g: (-g * np.sin(a.value),))

    def sin(self, a):
        return self.record("sin", [a], np.sin(a.value),
                           lambda g: (g * np.cos(a.value),))

    def exp(self, a):
        out = np.exp(a.value)
        return self.record("exp", [a], out, lambda g: (g * out,))

    def tanh(self, a):
        out = np.tanh(a.value)
        return self.record("tanh", [a], out,
                           lambda g: (g * (1.0 - out * out),))

    def relu(self, a):
        mask = a.value > 0.0
        return self.record("relu", [a], np.where(mask, a.value, 0.0),
                           lambda g: (g * mask,))

    def sqrt(self, a):
        out = np.sqrt(a.value)
        return self.record("sqrt", [a], out,
                           lambda g: (g * (0.5 / out),))

    def clip_min(self, a, floor):
        """max(a, floor); gradient passes only where a > floor."""
        floor = float(floor)
        mask = a.value > floor
        return self.record("clip_min", [a], np.where(mask, a.value, floor),
                           lambda g: (g * mask,))

    # ------------------------------------------------------------ reductions

    def sum(self, a):
        shape = a.value.shape
        return self.record("sum", [a], np.asarray(a.value.sum()),
                           lambda g: (np.broadcast_to(g, shape).copy(),))

    def mean(self, a):
        shape = a.value.shape
        n = a.value.size
        return self.record("mean", [a], np.asarray(a.value.mean()),
                           lambda g: (np.broadcast_to(g / n, shape).copy(),))

    def sumsq(self, a):
        """Squared L2 norm of all elements."""
        return self.record("sumsq", [a], np.asarray(np.sum(a.value * a.value)),
                           lambda g: (2.0 * g * a.value,))

    # ------------------------------------------------------- linear algebra

    def matmul(self, a, b):
        av, bv = a.value, b.value
        if av.ndim == 2 and bv.ndim == 2:
            if av.shape[1] != bv.shape[0]:
                raise ShapeError("matmul", av.shape, bv.shape)
            return self.record("matmul", [a, b], av @ bv,
                               lambda g: (g @ bv.T, av.T @ g))
        if av.ndim == 2 and bv.ndim == 1:
            if av.shape[1] != bv.shape[0]:
                raise ShapeError("matmul", av.shape, bv.shape)
            return self.record("matmul", [a, b], av @ bv,
                               lambda g: (np.outer(g, bv), av.T @ g))
        if av.ndim == 1 and bv.ndim == 2:
            if av.shape[0] != bv.shape[0]:
                raise ShapeError("matmul", av.shape, bv.shape)
            return self.record("matmul", [a, b], av @ bv,
                               lambda g: (bv @ g, np.outer(av, g)))
        raise ShapeError("matmul", av.shape, bv.shape)

    def transpose(self, a):
        if a.value.ndim != 2:
            raise ShapeError("transpose", a.value.shape)
        return self.record("transpose", [a], a.value.T.copy(),
                           lambda g: (g.T,))

    def reshape(self, a, shape):
        shape = tuple(int(s) for s in shape)
        old = a.value.shape
        if int(np.prod(shape, dtype=np.int64)) != a.value.size:
            raise ShapeError("reshape", old, shape)
        return self.record("reshape", [a], a.value.reshape(shape),
                           lambda g: (g.reshape(old),))

    # --------------------------------------------------- row-wise broadcasts

    def _check_row(self, tag, m, v):
        if m.value.ndim != 2 or v.value.ndim != 1 or m.value.shape[1] != v.value.shape[0]:
            raise ShapeError(tag, m.value.shape, v.value.shape)

    def addrow(self, m, v):
        """Add vector v to every row of matrix m."""
        self._check_row("addrow", m, v)
        return self.record("addrow", [m, v], m.value + v.value,
                           lambda g: (g, g.sum(axis=0)))

    def mulrow(self, m, v):
        """Multiply every row of m elementwise by v (scales column j by v[j])."""
        self._check_row("mulrow", m, v)
        return self.record("mulrow", [m, v], m.value * v.value,
                           lambda g: (g * v.value, (g * m.value).sum(axis=0)))

    def rowscale(self, m, v):
        """Scale row i of m by v[i]; equivalent to diag(v) @ m."""
        if m.value.ndim != 2 or v.value.ndim != 1 or m.value.shape[0] != v.value.shape[0]:
            raise ShapeError("rowscale", m.value.shape, v.value.shape)
        return self.record("rowscale", [m, v], m.value * v.value[:, None],
                           lambda g: (g * v.value[:, None],
                                      (g * m.value).sum(axis=1)))

    # --------------------------------------------------------- concatenation

    def vconcat(self, a, b):
        """Stack rows: (m,d) over (n,d) -> (m+n,d)."""
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[1]:
            raise ShapeError("vconcat", av.shape, bv.shape)
        m = av.shape[0]
        return self.record("vconcat", [a, b], np.vstack([av, bv]),
                           lambda g: (g[:m], g[m:]))

    def hconcat(self, a, b):
        """Side-by-side: (m,p) | (m,q) -> (m,p+q)."""
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[0] != bv.shape[0]:
            raise ShapeError("hconcat", av.shape, bv.shape)
        p = av.shape[1]
        return self.record("hconcat", [a, b], np.hstack([av, bv]),
                           lambda g: (g[:, :p], g[:, p:]))

    def concat1d(self, a, b):
        av, bv = a.value, b.value
        if av.ndim != 1 or bv.ndim != 1:
            raise ShapeError("concat1d", av.shape, bv.shape)
        p = av.shape[0]
        return self.record("concat1d", [a, b], np.concatenate([av, bv]),
                           lambda g: (g[:p], g[p:]))

    # ----------------------------------------------------- pairwise helpers

    def pair_concat(self, z):
        """All ordered row pairs of z (B,d) concatenated: row (i*B+j) is
        [z_i, z_j], output (B*B, 2d)."""
        zv = z.value
        if zv.ndim != 2:
            raise ShapeError("pair_concat", zv.shape)
        B, d = zv.shape
        left = np.repeat(zv, B, axis=0)
        right = np.tile(zv, (B, 1))
        out = np.hstack([left, right])

        def vjp(g):
            gl = g[:, :d].reshape(B, B, d).sum(axis=1)
            gr = g[:, d:].reshape(B, B, d).sum(axis=0)
            return (gl + gr,)

        return self.record("pair_concat", [z], out, vjp)

    def pair_sym_add(self, p, n_rows):
        """For p of shape (B*B, d) indexed by ordered pairs (i,j), return
        p[(i,j)] + p[(j,i)] (symmetrizes a pairwise table)."""
        pv = p.value
        B = int(n_rows)
        if pv.ndim != 2 or pv.shape[0] != B * B:
            raise ShapeError("pair_sym_add", pv.shape, (B * B,))
        d = pv.shape[1]
        cube = pv.reshape(B, B, d)
        out = (cube + cube.transpose(1, 0, 2)).reshape(B * B, d)

        def vjp(g):
            gc = g.reshape(B, B, d)
            return ((gc + gc.transpose(1, 0, 2)).reshape(B * B, d),)

        return self.record("pair_sym_add", [p], out, vjp)


# ------------------------------------------------------------------ backward

def _backward_seeded(root, seed):
    """Reverse sweep from root with an arbitrary seed gradient. Returns a
    dict node-id -> accumulated gradient for every visited node."""
    tape = root.tape
    grads = {root.id: as_tensor(seed)}
    # Mark the subgraph reachable from root so unrelated nodes are skipped.
    needed = {root.id}
    for node in reversed(tape.nodes[: root.id + 1]):
        if node.id in needed:
            for p in node.inputs:
                needed.add(p.id)
    for node in reversed(tape.nodes[: root.id + 1]):
        if node.id not in grads or node.vjp is None:
            continue
        gs = node.vjp(grads[node.id])
        for parent, g in zip(node.inputs, gs):
            if g is None:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + g
            else:
                grads[parent.id] = np.array(g, dtype=np.float64, copy=True)
    return grads


def backward(root):
    """Gradient of a scalar-shaped root w.r.t. every reachable node.

    Returns a map node-id -> gradient tensor and stores each gradient on the
    node's .grad field.
    """
    if root.value.shape != ():
        raise ValueError(
            f"backward requires a scalar-shaped root, got shape {root.value.shape}")
    grads = _backward_seeded(root, np.asarray(1.0))
    for node in root.tape.nodes:
        if node.id in grads:
            node.grad = grads[node.id]
    return grads


def jacobian(output, leaf):
    """Jacobian of a vector-valued node w.r.t. a leaf, one reverse sweep per
    output coordinate. Row i is d(output[i])/d(leaf), flattened row-major
    when the leaf is not a vector."""
    if output.value.ndim != 1:
        raise ValueError(
            f"jacobian requires a vector-valued output, got shape {output.value.shape}")
    if leaf.vjp is not None or leaf.inputs:
        raise ValueError("jacobian target must be a leaf of the tape")
    if leaf.tape is not output.tape:
        raise ValueError("jacobian target is not a leaf of this tape")
    n_out = output.value.shape[0]
    rows = np.zeros((n_out, leaf.value.size))
    seed = np.zeros(n_out)
    for i in range(n_out):
        seed[:] = 0.0
        seed[i] = 1.0
        grads = _backward_seeded(output, seed)
        g = grads.get(leaf.id)
        if g is not None:
            rows[i] = np.asarray(g).reshape(-1)
    return rows

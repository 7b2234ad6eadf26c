"""Reverse-mode automatic differentiation over dense arrays.

A Graph is a flat tape: every operation appends one node, so topological
order is insertion order by construction and backward() just walks the tape
in reverse. Graphs are rebuilt per training step (dynamic), which keeps
recurrent unrolls trivial.

float32 is the working dtype for training. The dtype is fixed per Graph and
float64 graphs are supported so numerical oracles (finite differences,
gradient-algebra checks) can run with enough headroom to be meaningful.
"""

from __future__ import annotations

import numpy as np


class GraphError(ValueError):
    pass


class ShapeError(GraphError):
    """Raised when an op gets incompatible operand shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(
            f"{op}: incompatible shapes " + " vs ".join(str(s) for s in self.shapes)
        )


class Tensor:
    """Dense array plus a gradient slot. Leaves of the graph."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"


class Var:
    """Handle to a node in a Graph. Cheap to copy, never holds data itself."""

    __slots__ = ("graph", "idx")

    def __init__(self, graph: "Graph", idx: int):
        self.graph = graph
        self.idx = idx

    @property
    def data(self) -> np.ndarray:
        return self.graph.nodes[self.idx].out

    @property
    def shape(self):
        return self.graph.nodes[self.idx].out.shape

    # arithmetic sugar; scalars and arrays on the right are lifted to constants
    def __add__(self, other):
        return self.graph.add(self, self.graph.lift(other))

    def __sub__(self, other):
        return self.graph.sub(self, self.graph.lift(other))

    def __rsub__(self, other):
        return self.graph.sub(self.graph.lift(other), self)

    def __mul__(self, other):
        return self.graph.mul(self, self.graph.lift(other))

    def __truediv__(self, other):
        return self.graph.div(self, self.graph.lift(other))

    def __rtruediv__(self, other):
        return self.graph.div(self.graph.lift(other), self)

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, self.graph.lift(other))

    def __getitem__(self, key):
        return self.graph.slice(self, key)

    __radd__ = __add__
    __rmul__ = __mul__


class _Node:
    __slots__ = ("op", "inputs", "out", "vjp", "needs", "tensor")

    def __init__(self, op, inputs, out, vjp, needs, tensor=None):
        self.op = op
        self.inputs = inputs      # node indices
        self.out = out            # np.ndarray
        self.vjp = vjp            # g -> list of input grads (or None entries)
        self.needs = needs        # participates in backward
        self.tensor = tensor      # leaf only


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == tuple(shape):
        return g
    # sum away prepended axes
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Graph:
    """Append-only op tape. Backward visits nodes in reverse insertion order."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[_Node] = []
        self._leaf_ids: dict[int, int] = {}   # id(tensor) -> node idx, dedupes reuse

    # ---- leaves ----------------------------------------------------------

    def leaf(self, tensor: Tensor) -> Var:
        key = id(tensor)
        hit = self._leaf_ids.get(key)
        if hit is not None:
            return Var(self, hit)
        if tensor.data.dtype != self.dtype:
            raise GraphError(
                f"leaf dtype {tensor.data.dtype} does not match graph dtype {self.dtype}"
            )
        node = _Node("leaf", (), tensor.data, None, tensor.requires_grad, tensor=tensor)
        self.nodes.append(node)
        idx = len(self.nodes) - 1
        self._leaf_ids[key] = idx
        return Var(self, idx)

    def constant(self, value) -> Var:
        arr = np.asarray(value, dtype=self.dtype)
        node = _Node("const", (), arr, None, False)
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def lift(self, value) -> Var:
        return value if isinstance(value, Var) else self.constant(value)

    def _emit(self, op: str, inputs: tuple[Var, ...], out: np.ndarray, vjp) -> Var:
        needs = any(self.nodes[v.idx].needs for v in inputs)
        node = _Node(op, tuple(v.idx for v in inputs), out, vjp if needs else None, needs)
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    # ---- ops -------------------------------------------------------------

    def matmul(self, a: Var, b: Var) -> Var:
        ad, bd = a.data, b.data
        if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
            raise ShapeError("matmul", ad.shape, bd.shape)
        out = ad @ bd

        def vjp(g):
            return (g @ bd.T, ad.T @ g)

        return self._emit("matmul", (a, b), out, vjp)

    def _binary(self, op, a: Var, b: Var, fwd, dva, dvb) -> Var:
        ad, bd = a.data, b.data
        try:
            np.broadcast_shapes(ad.shape, bd.shape)
        except ValueError:
            raise ShapeError(op, ad.shape, bd.shape) from None
        out = fwd(ad, bd)

        def vjp(g):
            return (_unbroadcast(dva(g, ad, bd), ad.shape),
                    _unbroadcast(dvb(g, ad, bd), bd.shape))

        return self._emit(op, (a, b), out, vjp)

    def add(self, a: Var, b: Var) -> Var:
        return self._binary("add", a, b, lambda x, y: x + y,
                            lambda g, x, y: g, lambda g, x, y: g)

    def sub(self, a: Var, b: Var) -> Var:
        return self._binary("sub", a, b, lambda x, y: x - y,
                            lambda g, x, y: g, lambda g, x, y: -g)

    def mul(self, a: Var, b: Var) -> Var:
        return self._binary("mul", a, b, lambda x, y: x * y,
                            lambda g, x, y: g * y, lambda g, x, y: g * x)

    def div(self, a: Var, b: Var) -> Var:
        return self._binary("div", a, b, lambda x, y: x / y,
                            lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))

    def neg(self, a: Var) -> Var:
        out = -a.data
        return self._emit("neg", (a,), out, lambda g: (-g,))

    def tanh(self, a: Var) -> Var:
        out = np.tanh(a.data)
        return self._emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))

    def relu(self, a: Var) -> Var:
        out = np.maximum(a.data, 0)
        mask = (a.data > 0).astype(self.dtype)
        return self._emit("relu", (a,), out, lambda g: (g * mask,))

    def sigmoid(self, a: Var) -> Var:
        # stable both directions
        x = a.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return self._emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))

    def exp(self, a: Var) -> Var:
        out = np.exp(a.data)
        return self._emit("exp", (a,), out, lambda g: (g * out,))

    def log(self, a: Var) -> Var:
        xd = a.data
        out = np.log(xd)
        return self._emit("log", (a,), out, lambda g: (g / xd,))

    def softplus(self, a: Var) -> Var:
        xd = a.data
        out = np.logaddexp(self.dtype.type(0), xd)
        sig = 1.0 / (1.0 + np.exp(-np.clip(xd, -60, 60)))
        return self._emit("softplus", (a,), out, lambda g: ((g * sig).astype(self.dtype),))

    def concat(self, parts: list[Var], axis: int = -1) -> Var:
        datas = [p.data for p in parts]
        ndim = datas[0].ndim
        for d in datas[1:]:
            if d.ndim != ndim:
                raise ShapeError("concat", *[d.shape for d in datas])
        out = np.concatenate(datas, axis=axis)
        ax = axis % ndim
        sizes = [d.shape[ax] for d in datas]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=ax))

        return self._emit("concat", tuple(parts), out, vjp)

    def slice(self, a: Var, key) -> Var:
        xd = a.data
        out = xd[key]
        shape = xd.shape

        def vjp(g):
            z = np.zeros(shape, dtype=self.dtype)
            z[key] = g
            return (z,)

        return self._emit("slice", (a,), np.ascontiguousarray(out), vjp)

    def sum(self, a: Var, axis=None, keepdims: bool = False) -> Var:
        xd = a.data
        out = xd.sum(axis=axis, keepdims=keepdims)
        shape = xd.shape

        def vjp(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, shape).astype(self.dtype, copy=False),)

        return self._emit("sum", (a,), np.asarray(out, dtype=self.dtype), vjp)

    def mean(self, a: Var, axis=None, keepdims: bool = False) -> Var:
        xd = a.data
        out = xd.mean(axis=axis, keepdims=keepdims)
        shape = xd.shape
        denom = xd.size if axis is None else xd.shape[axis]

        def vjp(g):
            gg = np.asarray(g) / denom
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, shape).astype(self.dtype, copy=False),)

        return self._emit("mean", (a,), np.asarray(out, dtype=self.dtype), vjp)

    def reshape(self, a: Var, shape) -> Var:
        xd = a.data
        out = xd.reshape(shape)
        orig = xd.shape

        def vjp(g):
            return (g.reshape(orig),)

        return self._emit("reshape", (a,), out, vjp)

    def embedding(self, table: Var, ids: np.ndarray) -> Var:
        """Row gather from a [V, E] table with integer ids of any shape."""
        td = table.data
        if td.ndim != 2:
            raise ShapeError("embedding", td.shape)
        ids = np.asarray(ids)
        out = td[ids]
        vshape = td.shape

        def vjp(g):
            gt = np.zeros(vshape, dtype=self.dtype)
            np.add.at(gt, ids, g)
            return (gt,)

        return self._emit("embedding", (table,), out, vjp)

    def clip(self, a: Var, lo: float, hi: float) -> Var:
        xd = a.data
        out = np.clip(xd, lo, hi)
        # subgradient 0 outside the open interval, 1 inside
        mask = ((xd > lo) & (xd < hi)).astype(self.dtype)

        def vjp(g):
            return (g * mask,)

        return self._emit("clip", (a,), out, vjp)

    # generic dispatch, handy for table-driven tests
    _OPS = {
        "matmul": matmul, "add": add, "sub": sub, "mul": mul, "div": div,
        "neg": neg, "tanh": tanh, "relu": relu, "sigmoid": sigmoid, "exp": exp,
        "log": log, "softplus": softplus, "sum": sum, "mean": mean,
        "reshape": reshape, "clip": clip, "slice": slice, "concat": concat,
    }

    def apply(self, op: str, *args, **kwargs) -> Var:
        fn = self._OPS.get(op)
        if fn is None:
            raise GraphError(f"unknown op: {op!r}")
        return fn(self, *args, **kwargs)

    # ---- backward --------------------------------------------------------

    def backward(self, loss: Var) -> None:
        """Accumulate gradients of a scalar loss into requires_grad leaves."""
        root = self.nodes[loss.idx]
        if root.out.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {root.out.shape}")
        buffers: dict[int, np.ndarray] = {
            loss.idx: np.ones_like(root.out, dtype=self.dtype)
        }
        touched: list[Tensor] = []
        for idx in range(loss.idx, -1, -1):
            g = buffers.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            if not node.needs:
                continue
            if node.tensor is not None:
                t = node.tensor
                if t.grad is None:
                    t.grad = g.copy()
                    touched.append(t)
                else:
                    t.grad += g
                continue
            grads = node.vjp(g)
            for j, gi in zip(node.inputs, grads):
                if gi is None or not self.nodes[j].needs:
                    continue
                buf = buffers.get(j)
                if buf is None:
                    # no copy here; buffers are never mutated in place because
                    # vjps may return aliased or read-only views
                    buffers[j] = gi.astype(self.dtype, copy=False)
                else:
                    buffers[j] = buf + gi


def softmax(graph: Graph, v: Var, axis: int = -1) -> Var:
    """Composed softmax. Subtracting the (detached) rowwise max is exact:
    softmax is shift invariant, so the max path carries zero gradient."""
    m = graph.constant(np.max(v.data, axis=axis, keepdims=True))
    e = graph.exp(graph.sub(v, m))
    s = graph.sum(e, axis=axis, keepdims=True)
    return graph.div(e, s)


def grad_check(fn, x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn(graph, var) must build a scalar loss from the single input. The graph
    is rebuilt per perturbation so fn must be pure. Relative error per
    coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    x.requires_grad = True
    x.grad = None
    g = Graph(dtype=x.data.dtype)
    loss = fn(g, g.leaf(x))
    g.backward(loss)
    analytic = np.array(x.grad, dtype=np.float64, copy=True)

    def eval_loss():
        gg = Graph(dtype=x.data.dtype)
        out = fn(gg, gg.leaf(x))
        return float(np.asarray(out.data).reshape(()))

    numeric = np.zeros(x.data.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        # divide by the realized step: in float32 the nominal eps gets
        # quantized when added, which would otherwise floor the error
        flat[i] = orig + eps
        x_hi = float(flat[i])
        f_hi = eval_loss()
        flat[i] = orig - eps
        x_lo = float(flat[i])
        f_lo = eval_loss()
        flat[i] = orig
        nflat[i] = (f_hi - f_lo) / (x_hi - x_lo)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))

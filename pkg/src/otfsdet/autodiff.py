"""Minimal reverse-mode automatic differentiation over numpy arrays.

A `Tape` records array-valued primitives in execution order; `backward`
replays them in reverse, accumulating gradients into every recorded variable
(in particular into named leaves, which is how parameter gradients are
collected).  Supported primitives cover exactly what the detectors need:
broadcast-aware elementwise arithmetic, a few smooth nonlinearities, dense
matmul, constant-sparse-matrix products, axis reductions, concatenation and
column-softmax.

Sparse matrices enter only as constants (channel operators, adjacency,
incidence), so their backward rule is multiplication by the pre-materialized
transpose.  With `Tape(record=False)` the same code paths run as plain
numpy with negligible bookkeeping, which is what inference uses.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Tape:
    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[Var] = []

    def _make(self, value, parents) -> "Var":
        v = Var(np.asarray(value, dtype=np.float64))
        if self.record:
            v.parents = parents
            self.nodes.append(v)
        return v

    def const(self, value) -> "Var":
        return self._make(value, ())

    def leaf(self, name: str, value) -> "Var":
        v = self._make(value, ())
        v.name = name
        return v

    def backward(self, root: "Var", seed=None):
        """Accumulate d(root)/d(node) into node.grad for every taped node."""
        if not self.record:
            raise RuntimeError("backward requires a recording tape")
        for n in self.nodes:
            n.grad = None
        root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is None or not node.parents:
                continue
            g = node.grad
            for parent, fn in node.parents:
                contrib = fn(g)
                # fresh arrays only; contrib may alias g or be a view of it
                parent.grad = contrib if parent.grad is None else parent.grad + contrib

    def leaf_grads(self) -> dict:
        out = {}
        for n in self.nodes:
            if n.name is not None and n.grad is not None:
                out[n.name] = out.get(n.name, 0) + n.grad
        return out


class Var:
    __slots__ = ("value", "grad", "parents", "name")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = None
        self.parents = ()
        self.name = None

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _as_value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _binary(t: Tape, a, b, out, da, db):
    parents = []
    if isinstance(a, Var):
        parents.append((a, lambda g, a=a: _unbroadcast(da(g), a.value.shape)))
    if isinstance(b, Var):
        parents.append((b, lambda g, b=b: _unbroadcast(db(g), b.value.shape)))
    return t._make(out, tuple(parents))


def add(t, a, b):
    av, bv = _as_value(a), _as_value(b)
    return _binary(t, a, b, av + bv, lambda g: g, lambda g: g)


def sub(t, a, b):
    av, bv = _as_value(a), _as_value(b)
    return _binary(t, a, b, av - bv, lambda g: g, lambda g: -g)


def mul(t, a, b):
    av, bv = _as_value(a), _as_value(b)
    return _binary(t, a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(t, a, b):
    av, bv = _as_value(a), _as_value(b)
    out = av / bv
    return _binary(t, a, b, out, lambda g: g / bv, lambda g: -g * av / (bv * bv))


def neg(t, a):
    return t._make(-a.value, ((a, lambda g: -g),))


def recip(t, a):
    out = 1.0 / a.value
    return t._make(out, ((a, lambda g: -g * out * out),))


def sqrt(t, a):
    out = np.sqrt(a.value)
    return t._make(out, ((a, lambda g: g * 0.5 / out),))


def exp(t, a):
    out = np.exp(a.value)
    return t._make(out, ((a, lambda g: g * out),))


def log(t, a):
    return t._make(np.log(a.value), ((a, lambda g: g / a.value),))


def tanh(t, a):
    out = np.tanh(a.value)
    return t._make(out, ((a, lambda g: g * (1.0 - out * out)),))


def sigmoid(t, a):
    # evaluated branch-wise so neither exp can overflow
    v = a.value
    pos = v >= 0
    ez = np.exp(np.where(pos, -v, v))
    out = np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return t._make(out, ((a, lambda g: g * out * (1.0 - out)),))


def relu(t, a):
    mask = a.value > 0
    return t._make(a.value * mask, ((a, lambda g: g * mask),))


def clip_min(t, a, floor: float):
    mask = a.value >= floor
    return t._make(np.maximum(a.value, floor), ((a, lambda g: g * mask),))


def matmul(t, a, b):
    av, bv = _as_value(a), _as_value(b)
    out = av @ bv
    return _binary(t, a, b, out, lambda g: g @ bv.T, lambda g: av.T @ g)


def sum_all(t, a):
    return t._make(a.value.sum(), ((a, lambda g: np.broadcast_to(g, a.value.shape)),))


def sum_axis(t, a, axis: int, keepdims: bool = False):
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g, a=a, axis=axis, keepdims=keepdims):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape)

    return t._make(out, ((a, back),))


def concat0(t, parts):
    vals = [p.value for p in parts]
    out = np.concatenate(vals, axis=0)
    sizes = np.cumsum([0] + [v.shape[0] for v in vals])
    parents = tuple(
        (p, lambda g, lo=sizes[i], hi=sizes[i + 1]: g[lo:hi]) for i, p in enumerate(parts)
    )
    return t._make(out, parents)


def reshape(t, a, shape):
    orig = a.value.shape
    return t._make(a.value.reshape(shape), ((a, lambda g: g.reshape(orig)),))


def softmax0(t, a):
    """Softmax along axis 0 (numerically shifted)."""
    z = a.value - a.value.max(axis=0, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=0, keepdims=True)

    def back(g, out=out):
        return out * (g - (out * g).sum(axis=0, keepdims=True))

    return t._make(out, ((a, back),))


class SpOp:
    """A constant sparse matrix plus its pre-materialized transpose."""

    def __init__(self, mat: sp.spmatrix):
        self.m = sp.csr_matrix(mat)
        self.mt = sp.csr_matrix(self.m.T)

    @property
    def shape(self):
        return self.m.shape


def spmv(t, s: SpOp, x):
    """y = A @ x for a constant sparse A and vector Var x."""
    out = s.m.dot(x.value)
    return t._make(out, ((x, lambda g: s.mt.dot(g)),))


def spmv_t(t, s: SpOp, x):
    """y = A.T @ x."""
    out = s.mt.dot(x.value)
    return t._make(out, ((x, lambda g: s.m.dot(g)),))


def col_mix(t, s: SpOp, x):
    """Y[:, i] = sum_j A[i, j] X[:, j] for X with node-indexed columns."""
    out = s.m.dot(x.value.T).T
    return t._make(out, ((x, lambda g: s.mt.dot(g.T).T),))


def grad_check(f, params: dict, step: float = 1e-6):
    """Central finite differences of a scalar f(params) w.r.t. every entry.

    f takes a dict name -> ndarray and returns a float.  Returns a dict of
    FD gradients with the same shapes.  Used by tests as the independent
    oracle for backward().
    """
    out = {}
    for name, val in params.items():
        g = np.zeros_like(val)
        flat = val.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + step
            fp = f(params)
            flat[idx] = keep - step
            fm = f(params)
            flat[idx] = keep
            gflat[idx] = (fp - fm) / (2.0 * step)
        out[name] = g
    return out

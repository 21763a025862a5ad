"""Reverse-mode differentiation over numpy arrays, plus second-order forward jets.

Two pieces cooperate:

* :class:`Node` is a tape entry.  Every primitive applied to a node records the
  parent nodes together with a vector-Jacobian closure.  Node ids increase in
  creation order, so sorting reachable nodes by id gives a reverse topological
  order without an explicit tape object.
* :class:`Jet` carries a truncated Taylor expansion ``(value, d1, d2)`` along a
  batch of input directions.  Its components may themselves be nodes, which is
  how residuals containing ``u_xx`` remain differentiable in the parameters.

All public primitives (``sin``, ``tanh``, ``matmul`` ...) dispatch on the type of
their argument, so the same model code runs on plain arrays, nodes and jets.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "AutodiffError", "NonFiniteError", "DivisionByZeroError",
    "Node", "Jet", "variable", "constant_value", "backward",
    "grad", "value_and_grad", "input_jacobian", "input_hessian_diag", "check_gradient",
    "add", "sub", "mul", "div", "neg", "power", "square", "exp", "log", "sin", "cos",
    "tanh", "sqrt", "abs_", "maximum", "erf", "matmul", "sum_", "mean", "reshape",
    "concatenate", "where", "seed_jet",
]


class AutodiffError(Exception):
    """Base class for differentiation failures."""


class NonFiniteError(AutodiffError, FloatingPointError):
    def __init__(self, primitive: str):
        super().__init__(f"non-finite value produced by primitive '{primitive}'")
        self.primitive = primitive


class DivisionByZeroError(AutodiffError, ZeroDivisionError):
    def __init__(self, primitive: str = "div"):
        super().__init__(f"division by zero in primitive '{primitive}'")
        self.primitive = primitive


_ids = itertools.count()


def _finite(value: np.ndarray, op: str) -> np.ndarray:
    # one reduction instead of an isfinite mask; nan/inf propagate through the sum
    if not math.isfinite(float(np.add.reduce(value, axis=None))):
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(op)
    return value


class Node:
    """Tape entry holding an array value and links to its parents.

    ``parents`` is a tuple of ``(node, vjp)`` pairs where ``vjp`` maps the
    adjoint of this node to the adjoint contribution for that parent.
    """

    __slots__ = ("id", "value", "parents", "op", "adjoint")
    __array_ufunc__ = None

    def __init__(self, value, parents: tuple = (), op: str = "leaf"):
        self.id = next(_ids)
        self.value = value
        self.parents = parents
        self.op = op
        self.adjoint = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op}, shape={self.value.shape})"

    def __len__(self):
        return len(self.value)

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


def variable(value) -> Node:
    """Create a leaf node (a differentiable input)."""
    return Node(np.array(value, dtype=np.float64))


def constant_value(x):
    """Strip nodes and jets down to the primal numpy value."""
    if isinstance(x, Jet):
        x = x.v
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _node(value, op, parents):
    return Node(_finite(value, op), parents, op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _val(x):
    return x.value if isinstance(x, Node) else x


# --------------------------------------------------------------------------- reverse pass


def backward(root: Node, seed=None) -> None:
    """Propagate adjoints from ``root`` to every node it depends on.

    Adjoints are left on the nodes (``node.adjoint``); nodes that ``root`` does
    not depend on keep ``adjoint = None``.
    """
    if not isinstance(root, Node):
        raise TypeError("backward expects a Node")
    seen = {root.id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        node.adjoint = None
        for parent, _ in node.parents:
            if parent.id not in seen:
                seen[parent.id] = parent
                stack.append(parent)
    root.adjoint = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
    for nid in sorted(seen, reverse=True):
        node = seen[nid]
        g = node.adjoint
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            parent.adjoint = contrib if parent.adjoint is None else parent.adjoint + contrib


# --------------------------------------------------------------------------- jets


def _zadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return add(a, b)


def _zmul(a, b):
    if a is None or b is None:
        return None
    return mul(a, b)


class Jet:
    """Second-order Taylor jet along ``K`` input directions.

    ``v`` has the primal shape ``S``; ``d1`` and ``d2`` have shape ``(K, *S)``
    and hold the first and second directional derivatives.  ``None`` stands
    for an identically zero derivative.
    """

    __slots__ = ("v", "d1", "d2")
    __array_ufunc__ = None

    def __init__(self, v, d1=None, d2=None):
        self.v = v
        self.d1 = d1
        self.d2 = d2

    @property
    def shape(self):
        return constant_value(self.v).shape

    @property
    def ndim(self):
        return len(self.shape)

    # DualValue-style accessors
    @property
    def primal(self):
        return self.v

    @property
    def tangent(self):
        return self.d1

    def _unary(self, y, f1, f2):
        d1 = _zmul(f1, self.d1)
        d2 = _zmul(f1, self.d2)
        if self.d1 is not None:
            d2 = _zadd(d2, mul(f2, mul(self.d1, self.d1)))
        return Jet(y, d1, d2)

    def _linear(self, fn, fn_d):
        """Apply a linear map ``fn`` to the value and ``fn_d`` to derivatives."""
        return Jet(fn(self.v),
                   None if self.d1 is None else fn_d(self.d1),
                   None if self.d2 is None else fn_d(self.d2))

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)

    def __repr__(self):
        return f"Jet(shape={self.shape})"


def _as_jet(x):
    return x if isinstance(x, Jet) else Jet(x)


def seed_jet(x: np.ndarray, directions: Sequence[int] | None = None) -> Jet:
    """Jet for a batch of points ``x`` of shape ``(..., d)``.

    Direction ``k`` is the unit vector along coordinate ``directions[k]``.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    dirs = list(range(d)) if directions is None else list(directions)
    d1 = np.zeros((len(dirs),) + x.shape)
    for k, j in enumerate(dirs):
        d1[k, ..., j] = 1.0
    return Jet(x, d1, None)


# --------------------------------------------------------------------------- primitives


def add(a, b):
    if isinstance(a, Jet) or isinstance(b, Jet):
        a, b = _as_jet(a), _as_jet(b)
        return Jet(add(a.v, b.v), _zadd(a.d1, b.d1), _zadd(a.d2, b.d2))
    if isinstance(a, Node) or isinstance(b, Node):
        av, bv = _val(a), _val(b)
        out = av + bv
        parents = []
        if isinstance(a, Node):
            sa = a.value.shape
            parents.append((a, lambda g: _unbroadcast(g, sa)))
        if isinstance(b, Node):
            sb = b.value.shape
            parents.append((b, lambda g: _unbroadcast(g, sb)))
        return _node(np.asarray(out, dtype=np.float64), "add", tuple(parents))
    return np.add(a, b)


def neg(a):
    if isinstance(a, Jet):
        return a._linear(neg, neg)
    if isinstance(a, Node):
        return _node(-a.value, "neg", ((a, lambda g: -g),))
    return np.negative(a)


def sub(a, b):
    if isinstance(a, Jet) or isinstance(b, Jet):
        a, b = _as_jet(a), _as_jet(b)
        d1 = a.d1 if b.d1 is None else (neg(b.d1) if a.d1 is None else sub(a.d1, b.d1))
        d2 = a.d2 if b.d2 is None else (neg(b.d2) if a.d2 is None else sub(a.d2, b.d2))
        return Jet(sub(a.v, b.v), d1, d2)
    if isinstance(a, Node) or isinstance(b, Node):
        av, bv = _val(a), _val(b)
        out = av - bv
        parents = []
        if isinstance(a, Node):
            sa = a.value.shape
            parents.append((a, lambda g: _unbroadcast(g, sa)))
        if isinstance(b, Node):
            sb = b.value.shape
            parents.append((b, lambda g: _unbroadcast(-g, sb)))
        return _node(np.asarray(out, dtype=np.float64), "sub", tuple(parents))
    return np.subtract(a, b)


def mul(a, b):
    if isinstance(a, Jet) or isinstance(b, Jet):
        a, b = _as_jet(a), _as_jet(b)
        d1 = _zadd(_zmul(a.d1, b.v), _zmul(a.v, b.d1))
        d2 = _zadd(_zmul(a.d2, b.v), _zmul(a.v, b.d2))
        if a.d1 is not None and b.d1 is not None:
            d2 = _zadd(d2, mul(2.0, mul(a.d1, b.d1)))
        return Jet(mul(a.v, b.v), d1, d2)
    if isinstance(a, Node) or isinstance(b, Node):
        av, bv = _val(a), _val(b)
        out = np.asarray(av * bv, dtype=np.float64)
        parents = []
        if isinstance(a, Node):
            sa = a.value.shape
            parents.append((a, lambda g: _unbroadcast(g * bv, sa)))
        if isinstance(b, Node):
            sb = b.value.shape
            parents.append((b, lambda g: _unbroadcast(g * av, sb)))
        return _node(out, "mul", tuple(parents))
    return np.multiply(a, b)


def reciprocal(a):
    if isinstance(a, Jet):
        y = reciprocal(a.v)
        y2 = mul(y, y)
        return a._unary(y, neg(y2), mul(2.0, mul(y2, y)))
    av = _val(a)
    if np.any(av == 0):
        raise DivisionByZeroError("reciprocal")
    y = 1.0 / av
    if isinstance(a, Node):
        return _node(y, "reciprocal", ((a, lambda g: -g * y * y),))
    return y


def div(a, b):
    if isinstance(a, Jet) or isinstance(b, Jet):
        if not isinstance(b, (Jet, Node)):
            return mul(a, reciprocal(np.asarray(b, dtype=np.float64)))
        return mul(a, reciprocal(b))
    bv = _val(b)
    if np.any(bv == 0):
        raise DivisionByZeroError("div")
    if isinstance(a, Node) or isinstance(b, Node):
        av = _val(a)
        out = np.asarray(av / bv, dtype=np.float64)
        parents = []
        if isinstance(a, Node):
            sa = a.value.shape
            parents.append((a, lambda g: _unbroadcast(g / bv, sa)))
        if isinstance(b, Node):
            sb = b.value.shape
            parents.append((b, lambda g: _unbroadcast(-g * out / bv, sb)))
        return _node(out, "div", tuple(parents))
    return np.divide(a, b)


def square(a):
    if isinstance(a, Jet):
        return a._unary(mul(a.v, a.v), mul(2.0, a.v), 2.0)
    if isinstance(a, Node):
        av = a.value
        return _node(av * av, "square", ((a, lambda g: 2.0 * g * av),))
    return np.square(a)


def power(a, p):
    """``a ** p`` for a constant real exponent ``p``."""
    if isinstance(p, (Node, Jet)):
        raise TypeError("power supports constant exponents only")
    p = float(p)
    if p == 2.0:
        return square(a)
    if p == 1.0:
        return a
    if isinstance(a, Jet):
        y = power(a.v, p)
        f1 = mul(p, power(a.v, p - 1.0))
        f2 = mul(p * (p - 1.0), power(a.v, p - 2.0)) if p != 2.0 else 2.0
        return a._unary(y, f1, f2)
    av = _val(a)
    if p < 0 and np.any(av == 0):
        raise DivisionByZeroError("power")
    with np.errstate(all="ignore"):
        y = np.power(av, p)
    if isinstance(a, Node):
        return _node(y, "power", ((a, lambda g: g * p * np.power(av, p - 1.0)),))
    return y


def exp(a):
    if isinstance(a, Jet):
        y = exp(a.v)
        return a._unary(y, y, y)
    if isinstance(a, Node):
        with np.errstate(over="ignore"):
            y = np.exp(a.value)
        return _node(y, "exp", ((a, lambda g: g * y),))
    return np.exp(a)


def log(a):
    if isinstance(a, Jet):
        r = reciprocal(a.v)
        return a._unary(log(a.v), r, neg(mul(r, r)))
    if isinstance(a, Node):
        av = a.value
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(av)
        return _node(y, "log", ((a, lambda g: g / av),))
    return np.log(a)


def sin(a):
    if isinstance(a, Jet):
        s = sin(a.v)
        return a._unary(s, cos(a.v), neg(s))
    if isinstance(a, Node):
        av = a.value
        return _node(np.sin(av), "sin", ((a, lambda g: g * np.cos(av)),))
    return np.sin(a)


def cos(a):
    if isinstance(a, Jet):
        c = cos(a.v)
        return a._unary(c, neg(sin(a.v)), neg(c))
    if isinstance(a, Node):
        av = a.value
        return _node(np.cos(av), "cos", ((a, lambda g: -g * np.sin(av)),))
    return np.cos(a)


def tanh(a):
    if isinstance(a, Jet):
        y = tanh(a.v)
        f1 = sub(1.0, mul(y, y))
        return a._unary(y, f1, mul(-2.0, mul(y, f1)))
    if isinstance(a, Node):
        y = np.tanh(a.value)
        return _node(y, "tanh", ((a, lambda g: g * (1.0 - y * y)),))
    return np.tanh(a)


def sqrt(a):
    if isinstance(a, Jet):
        y = sqrt(a.v)
        f1 = div(0.5, y)
        return a._unary(y, f1, neg(div(f1, mul(2.0, a.v))))
    if isinstance(a, Node):
        with np.errstate(invalid="ignore"):
            y = np.sqrt(a.value)
        return _node(y, "sqrt", ((a, lambda g: g * 0.5 / y),))
    return np.sqrt(a)


def erf(a):
    if isinstance(a, Jet):
        f1 = mul(2.0 / math.sqrt(math.pi), exp(neg(mul(a.v, a.v))))
        return a._unary(erf(a.v), f1, mul(-2.0, mul(a.v, f1)))
    if isinstance(a, Node):
        av = a.value
        return _node(special.erf(av), "erf",
                     ((a, lambda g: g * (2.0 / math.sqrt(math.pi)) * np.exp(-av * av)),))
    return special.erf(a)


def where(cond, a, b):
    """Select ``a`` where the constant mask ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    if isinstance(a, Jet) or isinstance(b, Jet):
        a, b = _as_jet(a), _as_jet(b)

        def pick(x, y):
            if x is None and y is None:
                return None
            if x is None:
                return where(cond, 0.0, y)
            if y is None:
                return where(cond, x, 0.0)
            return where(cond, x, y)

        return Jet(where(cond, a.v, b.v), pick(a.d1, b.d1), pick(a.d2, b.d2))
    if isinstance(a, Node) or isinstance(b, Node):
        av, bv = _val(a), _val(b)
        out = np.where(cond, av, bv).astype(np.float64)
        parents = []
        if isinstance(a, Node):
            sa = a.value.shape
            parents.append((a, lambda g: _unbroadcast(np.where(cond, g, 0.0), sa)))
        if isinstance(b, Node):
            sb = b.value.shape
            parents.append((b, lambda g: _unbroadcast(np.where(cond, 0.0, g), sb)))
        return _node(out, "where", tuple(parents))
    return np.where(cond, a, b)


def abs_(a):
    return where(constant_value(a) >= 0, a, neg(a))


def maximum(a, b):
    """Elementwise max; the branch is chosen on primal values."""
    return where(constant_value(a) >= constant_value(b), a, b)


def sum_(a, axis=None, keepdims=False):
    if isinstance(a, Jet):
        nd = a.ndim
        if axis is None:
            ax_d = tuple(range(1, nd + 1))
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            ax_d = tuple((ax % nd) + 1 for ax in axes)
        return a._linear(lambda v: sum_(v, axis, keepdims), lambda d: sum_(d, ax_d, keepdims))
    if isinstance(a, Node):
        shape = a.value.shape
        out = np.sum(a.value, axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return _node(np.asarray(out, dtype=np.float64), "sum", ((a, vjp),))
    return np.sum(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    shape = constant_value(a).shape
    if axis is None:
        n = int(np.prod(shape)) if shape else 1
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([shape[ax] for ax in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    shape = tuple(shape) if not isinstance(shape, int) else (shape,)
    if isinstance(a, Jet):
        return a._linear(lambda v: reshape(v, shape), lambda d: reshape(d, (d.shape[0],) + shape))
    if isinstance(a, Node):
        old = a.value.shape
        return _node(a.value.reshape(shape), "reshape", ((a, lambda g: g.reshape(old)),))
    return np.reshape(a, shape)


def transpose(a):
    if isinstance(a, Node):
        return _node(a.value.T, "transpose", ((a, lambda g: g.T),))
    return np.transpose(a)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx):
    if isinstance(a, Jet):
        idx_d = (slice(None),) + (idx if isinstance(idx, tuple) else (idx,))
        if Ellipsis in idx_d[1:]:
            idx_d = idx if isinstance(idx, tuple) else (idx,)
        return a._linear(lambda v: getitem(v, idx), lambda d: getitem(d, idx_d))
    if isinstance(a, Node):
        shape = a.value.shape
        basic = _is_basic_index(idx)

        def vjp(g):
            z = np.zeros(shape)
            if basic:
                z[idx] += g
            else:
                np.add.at(z, idx, g)
            return z

        return _node(np.array(a.value[idx], dtype=np.float64), "getitem", ((a, vjp),))
    return np.asarray(a)[idx]


def concatenate(items: Sequence, axis: int = -1):
    items = list(items)
    if any(isinstance(x, Jet) for x in items):
        jets = [_as_jet(x) for x in items]
        nd = jets[0].ndim
        ax_d = (axis % nd) + 1
        K = next((j.d1.shape[0] for j in jets if j.d1 is not None),
                 next((j.d2.shape[0] for j in jets if j.d2 is not None), None))

        def cat_d(attr):
            parts = [getattr(j, attr) for j in jets]
            if all(p is None for p in parts):
                return None
            parts = [np.zeros((K,) + j.shape) if p is None else p for p, j in zip(parts, jets)]
            return concatenate(parts, ax_d)

        return Jet(concatenate([j.v for j in jets], axis), cat_d("d1"), cat_d("d2"))
    if any(isinstance(x, Node) for x in items):
        vals = [_val(x) for x in items]
        out = np.concatenate(vals, axis=axis)
        bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
        parents = []
        for i, x in enumerate(items):
            if isinstance(x, Node):
                parents.append((x, lambda g, i=i: np.split(g, bounds, axis=axis)[i]))
        return _node(out, "concatenate", tuple(parents))
    return np.concatenate([np.asarray(x, dtype=np.float64) for x in items], axis=axis)


def matmul(a, b):
    """``a @ b`` with ``b`` a matrix or vector and ``a`` of any rank >= 1."""
    if isinstance(b, Jet):
        raise TypeError("matmul supports jets on the left operand only")
    if isinstance(a, Jet):
        return a._linear(lambda v: matmul(v, b), lambda d: matmul(d, b))
    if isinstance(a, Node) or isinstance(b, Node):
        av, bv = _val(a), _val(b)
        with np.errstate(all="ignore"):
            out = av @ bv
        parents = []
        if bv.ndim == 2:
            if isinstance(a, Node):
                parents.append((a, lambda g: g @ bv.T))
            if isinstance(b, Node):
                m, n = bv.shape
                if av.ndim == 1:
                    parents.append((b, lambda g: np.outer(av, g)))
                else:
                    parents.append((b, lambda g: av.reshape(-1, m).T @ g.reshape(-1, n)))
        elif bv.ndim == 1:
            if isinstance(a, Node):
                parents.append((a, lambda g: np.multiply.outer(g, bv)))
            if isinstance(b, Node):
                m = bv.shape[0]
                parents.append((b, lambda g: av.reshape(-1, m).T @ np.reshape(g, -1)))
        else:
            raise ValueError("matmul right operand must be 1-D or 2-D")
        return _node(np.asarray(out, dtype=np.float64), "matmul", tuple(parents))
    return np.matmul(a, b)


# --------------------------------------------------------------------------- drivers


def value_and_grad(f: Callable, params) -> tuple[float, np.ndarray]:
    """Evaluate scalar ``f`` at ``params`` and its reverse-mode gradient."""
    x = variable(params)
    out = f(x)
    if not isinstance(out, Node):
        return float(np.asarray(out)), np.zeros_like(x.value)
    if out.value.size != 1:
        raise ValueError("grad requires a scalar-valued function")
    backward(out)
    g = np.zeros_like(x.value) if x.adjoint is None else np.array(x.adjoint, dtype=np.float64)
    return float(out.value), g.reshape(x.value.shape)


def grad(f: Callable, params) -> np.ndarray:
    """Reverse-mode gradient of a scalar function of a parameter vector."""
    return value_and_grad(f, params)[1]


def _jet_out(out, n_dirs, shape_hint=None):
    if not isinstance(out, Jet):
        v = np.asarray(constant_value(out))
        return v, np.zeros((n_dirs,) + v.shape), np.zeros((n_dirs,) + v.shape)
    v = constant_value(out.v)
    d1 = np.zeros((n_dirs,) + v.shape) if out.d1 is None else np.broadcast_to(
        constant_value(out.d1), (n_dirs,) + v.shape)
    d2 = np.zeros((n_dirs,) + v.shape) if out.d2 is None else np.broadcast_to(
        constant_value(out.d2), (n_dirs,) + v.shape)
    return v, d1, d2


def input_jacobian(f: Callable, x) -> np.ndarray:
    """Jacobian ``J[i, j] = d f_i / d x_j`` by forward jets along every coordinate."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    out = f(seed_jet(x))
    v, d1, _ = _jet_out(out, x.size)
    return np.asarray(d1).reshape(x.size, -1).T.copy()


def input_hessian_diag(f: Callable, x) -> np.ndarray:
    """Pure second derivatives ``d^2 f / d x_j^2`` of a scalar function."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    out = f(seed_jet(x))
    v, _, d2 = _jet_out(out, x.size)
    if np.asarray(v).size != 1:
        raise ValueError("input_hessian_diag requires a scalar-valued function")
    return np.asarray(d2).reshape(x.size).copy()


def relative_error(a, b, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den)) if a.size else 0.0


def central_difference(f: Callable, x, step: float) -> np.ndarray:
    """Central-difference Jacobian of ``f`` (rows: outputs, cols: inputs)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    cols = []
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        fp = np.asarray(constant_value(f(xp)), dtype=np.float64).reshape(-1)
        fm = np.asarray(constant_value(f(xm)), dtype=np.float64).reshape(-1)
        cols.append((fp - fm) / (2.0 * step))
    return np.stack(cols, axis=1)


def check_gradient(f: Callable, x, step: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between autodiff and central differences.

    Scalar functions are checked through :func:`grad`; vector functions
    through :func:`input_jacobian`.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    fd = central_difference(f, x, step)
    if fd.shape[0] == 1:
        ad = grad(f, x).reshape(1, -1)
    else:
        ad = input_jacobian(f, x)
    return relative_error(ad, fd, floor)

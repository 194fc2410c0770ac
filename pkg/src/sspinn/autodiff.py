"""Minimal reverse-mode accumulation over numpy arrays.

Only what the losses need: elementwise arithmetic with broadcasting,
reductions, a few unary maps, constant linear maps and multi-output custom
nodes (used for the network jet evaluation).  Graphs are built eagerly and
differentiated once with :meth:`Var.backward`.
"""
import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a non-finite value appears in a differentiated graph."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def _unbroadcast(g, shape):
    if np.shape(g) == shape:
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Node:
    """Base graph node; ``parents`` receive contributions through ``vjp``."""

    __slots__ = ("parents", "vjp", "grad", "__weakref__")

    def __init__(self, parents=(), vjp=None):
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    def accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g


class Var(Node):
    __slots__ = ("value",)
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None):
        super().__init__(parents, vjp)
        self.value = value

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Var):
            if np.isscalar(other) and other == 0:
                return self
            shp = self.shape
            return Var(self.value + other, (self,), lambda g: (_unbroadcast(g, shp),))
        sa, sb = self.shape, other.shape
        return Var(self.value + other.value, (self, other),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if not isinstance(other, Var):
            if np.isscalar(other) and other == 0:
                return self
            shp = self.shape
            return Var(self.value - other, (self,), lambda g: (_unbroadcast(g, shp),))
        sa, sb = self.shape, other.shape
        return Var(self.value - other.value, (self, other),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def __rsub__(self, other):
        shp = self.shape
        return Var(other - self.value, (self,), lambda g: (_unbroadcast(-g, shp),))

    def __mul__(self, other):
        if not isinstance(other, Var):
            if np.isscalar(other) and other == 1:
                return self
            shp = self.shape
            return Var(self.value * other, (self,), lambda g: (_unbroadcast(g * other, shp),))
        a, b = self.value, other.value
        sa, sb = self.shape, other.shape
        return Var(a * b, (self, other),
                   lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Var):
            return self * (1.0 / other)
        a, b = self.value, other.value
        sa, sb = self.shape, other.shape
        q = a / b
        return Var(q, (self, other),
                   lambda g: (_unbroadcast(g / b, sa), _unbroadcast(-g * q / b, sb)))

    def __rtruediv__(self, other):
        b = self.value
        shp = self.shape
        q = other / b
        return Var(q, (self,), lambda g: (_unbroadcast(-g * q / b, shp),))

    def __pow__(self, k):
        if k == 2:
            return square(self)
        a = self.value
        return Var(a ** k, (self,), lambda g: (g * k * a ** (k - 1),))

    def __getitem__(self, idx):
        a = self.value
        shp = self.shape

        def vjp(g):
            out = np.zeros(shp)
            out[idx] += g
            return (out,)

        return Var(a[idx], (self,), vjp)

    # graph traversal ----------------------------------------------------

    def backward(self, seed=1.0):
        """Accumulate ``d self / d leaf`` into ``leaf.grad`` for every ancestor."""
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.broadcast_to(np.asarray(seed, dtype=float), self.shape).copy()
        for node in reversed(order):
            if node.vjp is None or node.grad is None:
                continue
            contribs = node.vjp(node.grad)
            for parent, g in zip(node.parents, contribs):
                if g is not None:
                    parent.accumulate(g)


def _toposort(root):
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


class Bundle(Node):
    """Hidden node behind a multi-output custom operation.

    Its ``grad`` is a list with one slot per output; ``vjp`` receives that
    list (unset slots are ``None``).
    """

    __slots__ = ("nout",)

    def __init__(self, nout, parents, vjp):
        super().__init__(parents, vjp)
        self.nout = nout

    def accumulate(self, g):
        k, gk = g
        if self.grad is None:
            self.grad = [None] * self.nout
        self.grad[k] = gk if self.grad[k] is None else self.grad[k] + gk


def custom(values, parents, vjp):
    """Create one Var per entry of ``values`` sharing a single backward call.

    ``vjp(grads)`` gets a list of output adjoints (``None`` where unused) and
    returns one gradient per parent.
    """
    bundle = Bundle(len(values), tuple(parents), vjp)
    outs = []
    for k, v in enumerate(values):
        outs.append(Var(v, (bundle,), (lambda g, k=k: ((k, g),))))
    return outs


# free functions ------------------------------------------------------------


def value_of(x):
    return x.value if isinstance(x, Var) else x


def square(x):
    if not isinstance(x, Var):
        return x * x
    a = x.value
    return Var(a * a, (x,), lambda g: (2.0 * g * a,))


def mean(x):
    if not isinstance(x, Var):
        return np.mean(x)
    a = x.value
    n = np.size(a)
    shp = np.shape(a)
    return Var(np.mean(a), (x,), lambda g: (np.full(shp, g / n),))


def vsum(x):
    if not isinstance(x, Var):
        return np.sum(x)
    shp = x.shape
    return Var(np.sum(x.value), (x,), lambda g: (np.full(shp, g),))


def sigmoid(x):
    if not isinstance(x, Var):
        return _sigmoid(x)
    s = _sigmoid(x.value)
    return Var(s, (x,), lambda g: (g * s * (1.0 - s),))


def _sigmoid(a):
    a = np.asarray(a, dtype=float)
    return np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                    np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))[()]


def matvec(M, x):
    """``M @ x`` for a constant matrix ``M``."""
    if not isinstance(x, Var):
        return M @ x
    return Var(M @ x.value, (x,), lambda g: (M.T @ g,))


def concat(parts):
    """Concatenate 1-D Vars/arrays."""
    vals = [value_of(p) for p in parts]
    sizes = [np.size(v) for v in vals]
    out = np.concatenate([np.ravel(v) for v in vals])
    var_parents = [p for p in parts if isinstance(p, Var)]
    if not var_parents:
        return out
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        res = []
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(p, Var):
                res.append(g[a:b].reshape(p.shape))
        return tuple(res)

    return Var(out, tuple(var_parents), vjp)


def check_finite(x, label="value"):
    v = np.asarray(value_of(x))
    if not np.all(np.isfinite(v)):
        bad = np.flatnonzero(~np.isfinite(v.ravel()))
        raise NonFiniteError(f"non-finite {label} at flat index {int(bad[0])}", int(bad[0]))
    return x


def gradient(fn, theta):
    """Value and gradient of scalar ``fn(Var(theta))`` with respect to ``theta``."""
    leaf = Var(np.asarray(theta, dtype=float))
    out = fn(leaf)
    if not isinstance(out, Var):
        return float(out), np.zeros_like(leaf.value)
    check_finite(out, "objective")
    out.backward()
    g = leaf.grad
    if g is None:
        g = np.zeros_like(leaf.value)
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NonFiniteError(f"non-finite gradient entry at parameter {bad}", bad)
    return float(out.value), g

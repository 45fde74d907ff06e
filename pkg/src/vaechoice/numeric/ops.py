"""Differentiable primitives.

Every function accepts plain arrays or :class:`~.tape.Var` operands.  With no
``Var`` among the inputs the result is a plain ``ndarray`` and nothing is
recorded; otherwise the result is a new node on the operands' tape.  Forward
values are computed by identical ``numpy`` expressions on both paths.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..errors import ShapeError
from .tape import Var

LOG_2PI = math.log(2.0 * math.pi)


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _record(out, inputs, grad_fns):
    """Record ``out`` with a gradient function for each ``Var`` input."""
    tape = _tape_of(*inputs)
    if tape is None:
        return out
    parents, fns = [], []
    for x, fn in zip(inputs, grad_fns):
        if isinstance(x, Var):
            parents.append(x)
            fns.append(fn)

    def vjp(g):
        return tuple(fn(g) for fn in fns)

    return tape.record(out, parents, vjp)


# -- arithmetic ---------------------------------------------------------------


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, (a, b), (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, (a, b), (lambda g: _unbroadcast(g, sa), lambda g: -_unbroadcast(g, sb)))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(
        out, (a, b), (lambda g: _unbroadcast(g * bv, sa), lambda g: _unbroadcast(g * av, sb))
    )


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(
        out,
        (a, b),
        (lambda g: _unbroadcast(g / bv, sa), lambda g: _unbroadcast(-g * out / bv, sb)),
    )


def neg(a):
    return _record(-value(a), (a,), (lambda g: -g,))


def power(a, p: float):
    av = value(a)
    out = av**p
    return _record(out, (a,), (lambda g: g * p * av ** (p - 1),))


def square(a):
    av = value(a)
    return _record(av * av, (a,), (lambda g: 2.0 * g * av,))


def matmul(a, b):
    av, bv = value(a), value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError("matmul expects two matrices")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return _record(av @ bv, (a, b), (lambda g: g @ bv.T, lambda g: av.T @ g))


# -- elementwise --------------------------------------------------------------


def exp(a):
    out = np.exp(value(a))
    return _record(out, (a,), (lambda g: g * out,))


def log(a):
    av = value(a)
    with np.errstate(divide="ignore"):
        out = np.log(av)
    return _record(out, (a,), (lambda g: g / av,))


def tanh(a):
    out = np.tanh(value(a))
    return _record(out, (a,), (lambda g: g * (1.0 - out * out),))


def sqrt(a):
    out = np.sqrt(value(a))
    return _record(out, (a,), (lambda g: 0.5 * g / out,))


def log_ndtr(a):
    """log of the standard Normal CDF, stable far into the lower tail."""
    av = value(a)
    out = special.log_ndtr(av)

    def grad(g):
        # d/dx log Phi(x) = phi(x) / Phi(x), evaluated in log space
        return g * np.exp(-0.5 * LOG_2PI - 0.5 * av * av - out)

    return _record(out, (a,), (grad,))


def clip(a, lo, hi):
    av = value(a)
    out = np.clip(av, lo, hi)
    inside = (av >= lo) & (av <= hi)
    return _record(out, (a,), (lambda g: g * inside,))


def where(cond, a, b):
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(np.where(cond, g, 0.0), sa),
            lambda g: _unbroadcast(np.where(cond, 0.0, g), sb),
        ),
    )


# -- reductions and reshaping -------------------------------------------------


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    av = value(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    shape = av.shape

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _record(out, (a,), (grad,))


def mean(a, axis=None, keepdims=False):
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    av = value(a)
    old = av.shape
    return _record(av.reshape(shape), (a,), (lambda g: g.reshape(old),))


def transpose(a):
    return _record(value(a).T, (a,), (lambda g: g.T,))


def getitem(a, idx):
    av = value(a)
    out = av[idx]

    def grad(g):
        full = np.zeros_like(av)
        np.add.at(full, idx, g)
        return full

    return _record(out, (a,), (grad,))


def concatenate(xs, axis=0):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def piece(k):
        def grad(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[k], bounds[k + 1])
            return g[tuple(sl)]

        return grad

    return _record(out, tuple(xs), tuple(piece(k) for k in range(len(xs))))


# -- composite-free primitives used by the models -----------------------------


def log_sum_exp(a, axis=None, keepdims=False):
    """``log(sum(exp(a)))`` with max-shift; all ``-inf`` slices give ``-inf``."""
    av = np.asarray(value(a), dtype=np.float64)
    if av.size == 0:
        raise ShapeError("log_sum_exp of an empty input")
    m = np.max(av, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out_k = np.log(np.sum(np.exp(av - m), axis=axis, keepdims=True)) + m
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def grad(g):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        with np.errstate(invalid="ignore"):
            w = np.exp(av - out_k)
        w = np.where(np.isneginf(av), 0.0, w)
        return g * w

    if axis is None and not keepdims:
        out = out.reshape(())
    return _record(out, (a,), (grad,))


def softmax(a, axis=-1):
    av = np.asarray(value(a), dtype=np.float64)
    if av.size == 0 or av.shape[axis] == 0:
        raise ShapeError("softmax of an empty input")
    e = np.exp(av - np.max(av, axis=axis, keepdims=True))
    out = e / np.sum(e, axis=axis, keepdims=True)

    def grad(g):
        return out * (g - np.sum(g * out, axis=axis, keepdims=True))

    return _record(out, (a,), (grad,))


def affine(W, b, x):
    """``W @ x + b`` for a vector ``x`` or row-wise for a matrix of inputs."""
    Wv, bv, xv = value(W), value(b), value(x)
    if Wv.ndim != 2:
        raise ShapeError(f"weight must be a matrix, got shape {Wv.shape}")
    if xv.shape[-1] != Wv.shape[1]:
        raise ShapeError(f"input width {xv.shape[-1]} != weight columns {Wv.shape[1]}")
    if bv.shape != (Wv.shape[0],):
        raise ShapeError(f"bias shape {bv.shape} != ({Wv.shape[0]},)")
    out = xv @ Wv.T + bv

    def grad_W(g):
        if xv.ndim == 1:
            return np.outer(g, xv)
        return g.T @ xv

    def grad_b(g):
        return g if g.ndim == 1 else g.sum(axis=0)

    return _record(out, (W, b, x), (grad_W, grad_b, lambda g: g @ Wv))


# -- operator overloading -----------------------------------------------------

Var.__add__ = lambda self, o: add(self, o)
Var.__radd__ = lambda self, o: add(o, self)
Var.__sub__ = lambda self, o: sub(self, o)
Var.__rsub__ = lambda self, o: sub(o, self)
Var.__mul__ = lambda self, o: mul(self, o)
Var.__rmul__ = lambda self, o: mul(o, self)
Var.__truediv__ = lambda self, o: div(self, o)
Var.__rtruediv__ = lambda self, o: div(o, self)
Var.__neg__ = lambda self: neg(self)
Var.__pow__ = lambda self, p: power(self, p)
Var.__matmul__ = lambda self, o: matmul(self, o)
Var.__rmatmul__ = lambda self, o: matmul(o, self)
Var.__getitem__ = lambda self, idx: getitem(self, idx)
Var.T = property(lambda self: transpose(self))
Var.sum = lambda self, axis=None, keepdims=False: sum(self, axis, keepdims)
Var.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
Var.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 else shape)

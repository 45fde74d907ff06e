"""Density building blocks and gradient helpers on top of the tape."""

from __future__ import annotations

import numpy as np
from scipy import special

from ..errors import ContractError
from . import ops
from .ops import LOG_2PI
from .tape import Tape, Var


def std_normal_logpdf(x):
    """``-0.5 ln(2 pi) - x^2 / 2``."""
    return ops.sub(-0.5 * LOG_2PI, ops.mul(0.5, ops.square(x)))


def std_normal_cdf(x):
    return special.ndtr(ops.value(x))


def gaussian_logpdf(x, mean, std):
    """Elementwise log density of ``N(mean, std^2)`` at ``x``."""
    u = ops.div(ops.sub(x, mean), std)
    return ops.sub(std_normal_logpdf(u), ops.log(std))


def gradient(f, x):
    """Reverse-mode gradient of the scalar function ``f`` at ``x``.

    ``f`` receives a tape variable and must build its result from the
    primitives in :mod:`vaechoice.numeric.ops`.
    """
    tape = Tape()
    xv = tape.var(x)
    out = f(xv)
    if not isinstance(out, Var):
        return np.zeros_like(xv.value)
    if out.value.size != 1:
        raise ContractError(f"f must return a scalar, got shape {out.value.shape}")
    return tape.grad(out, [xv])[0]


def central_difference(f, x, step=1e-5):
    """Central finite-difference gradient of a plain scalar function.

    Independent of the tape; used as the oracle in gradient checks.  The step
    is scaled by ``max(1, |x_i|)`` per coordinate.
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        h = step * max(1.0, abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a, b):
    """``||a - b||_inf / max(||a||_inf, ||b||_inf)`` (0 when both vanish)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)

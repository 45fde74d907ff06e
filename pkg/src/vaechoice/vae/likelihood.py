"""Normal likelihood truncated from below, and its sampler.

The decoder density is a product over attributes of Normals with mean
``mu_a`` and common scale ``sigma`` restricted to ``[lower_a, inf)``.  In
absolute units the lower bound is 0; a model trained on z-scored data
passes the z-score image of 0 instead so the support is the same set.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..errors import ParameterError
from ..numeric import ops
from ..numeric.functions import std_normal_logpdf

# below this acceptance probability rejection switches to the tail sampler
TAIL_SWITCH = 0.05


def truncnorm_logpdf_terms(x, mean, sigma: float, lower=0.0):
    """Per-coordinate log density (``-inf`` where ``x < lower``)."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    xv = np.asarray(ops.value(x))
    u = ops.div(ops.sub(x, mean), sigma)
    # log of the retained mass 1 - Phi((lower - mean) / sigma)
    log_mass = ops.log_ndtr(ops.div(ops.sub(mean, lower), sigma))
    terms = ops.sub(ops.sub(std_normal_logpdf(u), math.log(sigma)), log_mass)
    outside = xv < lower
    if np.any(outside):
        terms = ops.where(~outside, terms, -np.inf)
    return terms


def truncnorm_logpdf(x, mean, sigma: float, lower=0.0):
    """Log density summed over the last axis."""
    return ops.sum(truncnorm_logpdf_terms(x, mean, sigma, lower), axis=-1)


def _tail(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard Normal conditioned on ``>= a`` (``a > 0``) by exponential rejection."""
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        x = a[todo] + rng.exponential(size=todo.size) / lam[todo]
        ok = rng.random(todo.size) <= np.exp(-0.5 * (x - lam[todo]) ** 2)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def truncnorm_sample(mean, sigma: float, rng: np.random.Generator, lower=0.0) -> np.ndarray:
    """One draw per entry of ``mean`` from ``N(mean, sigma^2)`` restricted to ``>= lower``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    mean = np.asarray(mean, dtype=np.float64)
    a = np.broadcast_to((np.asarray(lower, dtype=np.float64) - mean) / sigma, mean.shape).ravel()
    std = np.empty(a.size)
    easy = special.ndtr(-a) >= TAIL_SWITCH
    todo = np.flatnonzero(easy)
    while todo.size:
        e = rng.standard_normal(todo.size)
        ok = e >= a[todo]
        std[todo[ok]] = e[ok]
        todo = todo[~ok]
    hard = np.flatnonzero(~easy)
    if hard.size:
        std[hard] = _tail(a[hard], rng)
    x = mean + sigma * std.reshape(mean.shape)
    # rounding can put a draw a hair below the bound
    return np.maximum(x, lower)

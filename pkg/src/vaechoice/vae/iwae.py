"""Importance-weighted bound, BC estimation and alternative generation.

For a row ``x`` and ``S`` posterior draws ``z_s = mean + std * eps_s`` the
log weights are ``log p(z_s) + log q(x | z_s) - log p(z_s | x)`` and the bound
is ``LSE_s(log w_s) - ln S``.  Training maximizes its batch mean through the
reparameterized draws; the BC estimate is the same number computed with the
weights held fixed and batch norm in evaluation mode.

Any object with ``encoder_out``, ``log_likelihood``, ``log_prior``,
``latent_dim``, ``params`` and ``check_x`` can be plugged in (the linear
Gaussian harness uses this).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import ParameterError
from ..numeric import ops
from ..numeric.functions import std_normal_logpdf
from .likelihood import truncnorm_sample

# rows per evaluation chunk scale as 1/S to bound memory
CHUNK_ELEMENTS = 50_000


def log_weights(model, p, x, eps, training=False, bn_batch=None):
    """(S, B) log importance weights for rows ``x`` (B, d) and noise ``eps`` (S, B, L)."""
    mean, logvar = model.encoder_out(p, x, training, bn_batch)
    std = ops.exp(ops.mul(0.5, logvar))
    z = ops.add(mean, ops.mul(std, eps))
    # log N(z; mean, std^2) with z - mean = std * eps
    log_post = ops.sub(ops.sum(std_normal_logpdf(eps), axis=-1), ops.mul(0.5, ops.sum(logvar, axis=-1)))
    log_prior = model.log_prior(z)
    loglik = model.log_likelihood(p, x, z, training, bn_batch)
    return ops.sub(ops.add(log_prior, loglik), log_post)


def bound_from_log_weights(lw):
    S = np.shape(ops.value(lw))[0]
    return ops.sub(ops.log_sum_exp(lw, axis=0), math.log(S))


def iwae_objective(model, p, x, eps, training=True, bn_batch=None):
    """Batch-mean bound; differentiable when ``p`` holds tape variables."""
    return ops.mean(bound_from_log_weights(log_weights(model, p, x, eps, training, bn_batch)))


def _check_S(S):
    if int(S) < 1:
        raise ParameterError(f"S must be >= 1, got {S}")


def _row_noise(rngs, S, L):
    return np.stack([g.standard_normal((S, L)) for g in rngs], axis=1)


def _eval_bounds(model, x, S, rng, workers=1):
    """Per-row bounds in evaluation mode.

    Each row draws its noise from its own child generator, so a row's value
    does not depend on the worker count.
    """
    n = len(x)
    children = rng.spawn(n)
    size = max(1, CHUNK_ELEMENTS // S)
    starts = list(range(0, n, size))

    def run(start):
        rows = x[start : start + size]
        eps = _row_noise(children[start : start + size], S, model.latent_dim)
        return bound_from_log_weights(log_weights(model, model.params, rows, eps))

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts) if parts else np.zeros(0)


def iwae_bound(model, x, S: int, rng: np.random.Generator, training: bool = False):
    """Stochastic lower bound on ``log q(x)`` per row (scalar for a single row).

    ``training=True`` evaluates batch norm with the statistics of ``x`` itself.
    """
    _check_S(S)
    x = np.asarray(x, dtype=np.float64)
    model.check_x(x)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if training:
        eps = _row_noise(rng.spawn(len(x2)), S, model.latent_dim)
        out = bound_from_log_weights(log_weights(model, model.params, x2, eps, training=True))
    else:
        out = _eval_bounds(model, x2, S, rng)
    return float(out[0]) if single else out


def estimate_log_bc(model, x, S: int, rng: np.random.Generator, workers: int = 1):
    """``ln BC`` of each row: the importance-weighted estimate with fixed weights."""
    _check_S(S)
    x = np.asarray(x, dtype=np.float64)
    model.check_x(x)
    single = x.ndim == 1
    out = _eval_bounds(model, np.atleast_2d(x), S, rng, workers)
    return float(out[0]) if single else out


def generate_alternatives(model, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws: ``z ~ N(0, I)`` then the truncated-Normal likelihood at ``z``."""
    z = rng.standard_normal((n, model.latent_dim))
    mean = model.decoder_out(model.params, z)
    return truncnorm_sample(mean, model.hp.decoder_sigma, rng, model.lower)


def generate_alternative(model, rng: np.random.Generator) -> np.ndarray:
    return generate_alternatives(model, 1, rng)[0]

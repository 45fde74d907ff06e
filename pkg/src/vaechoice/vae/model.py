"""Encoder/decoder networks.

Encoder: ``x -> [affine -> (batch norm) -> tanh] * D1 -> (mean head, log-variance head)``.
Decoder: ``z -> softmax -> [affine -> (batch norm) -> tanh] * D2 -> affine``, giving
the mean of the truncated-Normal likelihood.

Weights live in an ordered ``params`` dict.  The forward functions take that
dict explicitly so the same code runs on plain arrays or on tape variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError
from ..numeric import ops
from ..numeric.functions import std_normal_logpdf
from .hyperparams import VaeHyperparams
from .likelihood import truncnorm_logpdf

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LOGVAR_BOUNDS = (-10.0, 10.0)


@dataclass
class VaeModel:
    n_attributes: int
    hp: VaeHyperparams
    params: dict
    bn_state: dict = field(default_factory=dict)
    lower: np.ndarray | float = 0.0
    logvar_bounds: tuple = LOGVAR_BOUNDS
    normalization: object = None  # data.AttributeSchema used to z-score the training data

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), (self.n_attributes,)).copy()

    @property
    def latent_dim(self) -> int:
        return self.hp.latent_dim

    # -- layers ---------------------------------------------------------------

    def _batch_norm(self, p, key, h, training, bn_batch):
        if training:
            mu = ops.mean(h, axis=0)
            c = ops.sub(h, mu)
            var = ops.mean(ops.square(c), axis=0)
            hn = ops.div(c, ops.sqrt(ops.add(var, BN_EPS)))
            if bn_batch is not None:
                bn_batch[key] = (np.array(ops.value(mu)), np.array(ops.value(var)))
        else:
            mu, var = self.bn_state[key + ".mean"], self.bn_state[key + ".var"]
            hn = ops.div(ops.sub(h, mu), np.sqrt(var + BN_EPS))
        return ops.add(ops.mul(hn, p[key + ".gamma"]), p[key + ".beta"])

    def _stack(self, p, prefix, depth, h, training, bn_batch):
        for i in range(depth):
            key = f"{prefix}.{i}"
            h = ops.affine(p[key + ".W"], p[key + ".b"], h)
            if self.hp.batch_norm:
                h = self._batch_norm(p, key, h, training, bn_batch)
            h = ops.tanh(h)
        return h

    # -- forward --------------------------------------------------------------

    def check_x(self, x):
        shape = np.shape(ops.value(x))
        if len(shape) not in (1, 2) or shape[-1] != self.n_attributes:
            raise ShapeError(f"expected {self.n_attributes} attributes, got shape {shape}")

    def check_z(self, z):
        shape = np.shape(ops.value(z))
        if not shape or shape[-1] != self.latent_dim:
            raise ShapeError(f"expected latent dimension {self.latent_dim}, got shape {shape}")

    def encoder_out(self, p, x, training=False, bn_batch=None):
        """Posterior mean and clamped log-variance for a batch of rows."""
        h = self._stack(p, "enc", self.hp.encoder_hidden_layers, x, training, bn_batch)
        mean = ops.affine(p["enc.mean.W"], p["enc.mean.b"], h)
        logvar = ops.affine(p["enc.logvar.W"], p["enc.logvar.b"], h)
        lo, hi = self.logvar_bounds
        return mean, ops.clip(logvar, lo, hi)

    def decoder_out(self, p, z, training=False, bn_batch=None):
        """Likelihood mean for a matrix of latent rows."""
        h = ops.softmax(z, axis=-1)
        h = self._stack(p, "dec", self.hp.decoder_hidden_layers, h, training, bn_batch)
        return ops.affine(p["dec.out.W"], p["dec.out.b"], h)

    def log_likelihood(self, p, x, z, training=False, bn_batch=None):
        """``log q(x | z)`` for ``x`` of shape (B, d) and ``z`` of shape (S, B, L) -> (S, B)."""
        S, B, L = np.shape(ops.value(z))
        mean = self.decoder_out(p, ops.reshape(z, (S * B, L)), training, bn_batch)
        mean = ops.reshape(mean, (S, B, self.n_attributes))
        return truncnorm_logpdf(ops.value(x)[None], mean, self.hp.decoder_sigma, self.lower)

    @staticmethod
    def log_prior(z):
        return ops.sum(std_normal_logpdf(z), axis=-1)

    # -- parameter vector helpers ---------------------------------------------

    def flat_params(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def with_flat_params(self, vec) -> "VaeModel":
        vec = np.asarray(vec, dtype=np.float64)
        params, i = {}, 0
        for k, v in self.params.items():
            params[k] = vec[i : i + v.size].reshape(v.shape).copy()
            i += v.size
        if i != vec.size:
            raise ShapeError(f"parameter vector has {vec.size} entries, model needs {i}")
        return self.copy(params=params)

    def copy(self, params=None) -> "VaeModel":
        return VaeModel(
            self.n_attributes,
            self.hp,
            {k: v.copy() for k, v in (params if params is not None else self.params).items()},
            {k: v.copy() for k, v in self.bn_state.items()},
            self.lower.copy(),
            self.logvar_bounds,
            self.normalization,
        )


def init_model(
    n_attributes: int,
    hp: VaeHyperparams,
    rng: np.random.Generator,
    lower=0.0,
    normalization=None,
) -> VaeModel:
    """He-initialized weights (``N(0, 2 / fan_in)``), zero biases, unit BN scales."""
    if n_attributes < 1:
        raise ShapeError("need at least one attribute")
    params: dict = {}
    bn_state: dict = {}
    w = hp.hidden_width

    def layer(key, fan_in, fan_out, hidden):
        params[key + ".W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        params[key + ".b"] = np.zeros(fan_out)
        if hidden and hp.batch_norm:
            params[key + ".gamma"] = np.ones(fan_out)
            params[key + ".beta"] = np.zeros(fan_out)
            bn_state[key + ".mean"] = np.zeros(fan_out)
            bn_state[key + ".var"] = np.ones(fan_out)

    fan = n_attributes
    for i in range(hp.encoder_hidden_layers):
        layer(f"enc.{i}", fan, w, True)
        fan = w
    layer("enc.mean", fan, hp.latent_dim, False)
    layer("enc.logvar", fan, hp.latent_dim, False)

    fan = hp.latent_dim
    for i in range(hp.decoder_hidden_layers):
        layer(f"dec.{i}", fan, w, True)
        fan = w
    layer("dec.out", fan, n_attributes, False)
    return VaeModel(n_attributes, hp, params, bn_state, lower, LOGVAR_BOUNDS, normalization)


# -- single-purpose evaluation helpers (evaluation mode, no tape) ----------------


def _rows(model, x):
    x = np.asarray(x, dtype=np.float64)
    model.check_x(x)
    return x, x.ndim == 1


def encode(model: VaeModel, x):
    """Posterior mean and standard deviation."""
    x, single = _rows(model, x)
    mean, logvar = model.encoder_out(model.params, np.atleast_2d(x))
    std = np.exp(0.5 * logvar)
    return (mean[0], std[0]) if single else (mean, std)


def sample_posterior(model: VaeModel, x, rng: np.random.Generator):
    """``z = mean + std * eps`` with ``eps ~ N(0, I)``."""
    mean, std = encode(model, x)
    return mean + std * rng.standard_normal(np.shape(mean))


def decode_mean(model: VaeModel, z):
    z = np.asarray(z, dtype=np.float64)
    model.check_z(z)
    out = model.decoder_out(model.params, np.atleast_2d(z))
    return out[0] if z.ndim == 1 else out


def nest_membership(model: VaeModel, x, rng: np.random.Generator, draws: int = 100):
    """Average of ``softmax(z)`` over posterior draws: the nest-inclusion row of ``x``."""
    if draws < 1:
        raise ParameterError("draws must be >= 1")
    mean, std = encode(model, x)
    eps = rng.standard_normal((draws,) + np.shape(mean))
    alpha = ops.softmax(mean + std * eps, axis=-1).mean(axis=0)
    # renormalize away the averaging round-off
    return alpha / alpha.sum(axis=-1, keepdims=True)

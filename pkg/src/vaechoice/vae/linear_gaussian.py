"""Linear-Gaussian model with a closed-form marginal, for checking the estimator.

``z ~ N(0, I)``, ``x | z ~ N(z, I)`` so ``x ~ N(0, 2I)``.  The proposal is the
identity encoder ``N(x, I)``, which differs from the true posterior
``N(x / 2, I / 2)``; the bound therefore has a strictly positive gap that
closes as the number of draws grows.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from ..numeric import ops
from ..numeric.functions import std_normal_logpdf
from ..numeric.ops import LOG_2PI


class LinearGaussian:
    def __init__(self, dim: int):
        self.latent_dim = dim
        self.n_attributes = dim
        self.params: dict = {}

    def check_x(self, x):
        if np.shape(x)[-1] != self.n_attributes:
            raise ShapeError(f"expected {self.n_attributes} attributes")

    def encoder_out(self, p, x, training=False, bn_batch=None):
        return x, np.zeros(np.shape(ops.value(x)))

    def log_likelihood(self, p, x, z, training=False, bn_batch=None):
        return ops.sum(std_normal_logpdf(ops.sub(ops.value(x)[None], z)), axis=-1)

    @staticmethod
    def log_prior(z):
        return ops.sum(std_normal_logpdf(z), axis=-1)

    def log_marginal(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(np.sum(-0.5 * LOG_2PI - 0.5 * math.log(2.0) - x * x / 4.0))

    def single_draw_gap(self, x) -> float:
        """KL from the proposal to the posterior: the expected bound gap at one draw."""
        x = np.asarray(x, dtype=np.float64)
        return float(np.sum(0.5 * (1.0 - math.log(2.0) + x * x / 2.0)))

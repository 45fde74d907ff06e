"""Minibatch stochastic gradient ascent on the importance-weighted bound."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, DivergenceError
from ..numeric import Tape
from .iwae import iwae_objective
from .model import BN_MOMENTUM, VaeModel

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: VaeModel
    trace: np.ndarray  # minibatch bound before each update


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            params[k] = params[k] + self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] = params[k] + self.lr * g


def train(model: VaeModel, data, rng: np.random.Generator, log_every: int = 0) -> TrainResult:
    """Train a copy of ``model`` on rows of normalized attributes.

    Each step draws a minibatch without replacement and ``S`` noise vectors
    per row, and ascends the bound.  Batch-norm running statistics are
    exponential averages of the minibatch statistics.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("training data must be a non-empty matrix of attribute rows")
    model.check_x(x)
    hp = model.hp
    model = model.copy()
    n = len(x)
    m = min(hp.minibatch_size, n)
    opt = _Adam(hp.learning_rate) if hp.optimizer == "adam" else _Sgd(hp.learning_rate)
    trace = np.empty(hp.max_iterations)
    names = list(model.params)

    for it in range(hp.max_iterations):
        idx = rng.choice(n, size=m, replace=False)
        eps = rng.standard_normal((hp.mc_draws, m, hp.latent_dim))
        tape = Tape()
        pv = {k: tape.var(model.params[k]) for k in names}
        bn_batch: dict = {}
        obj = iwae_objective(model, pv, x[idx], eps, training=True, bn_batch=bn_batch)
        value = float(obj.value)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite training bound at iteration {it}", it)
        grads = dict(zip(names, tape.grad(obj, [pv[k] for k in names])))
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError(f"non-finite gradient at iteration {it}", it)
        trace[it] = value
        opt.step(model.params, grads)
        for key, (mu, var) in bn_batch.items():
            rows = len(idx) if key.startswith("enc") else len(idx) * hp.mc_draws
            unbiased = var * rows / max(rows - 1, 1)
            rm, rv = model.bn_state[key + ".mean"], model.bn_state[key + ".var"]
            model.bn_state[key + ".mean"] = (1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mu
            model.bn_state[key + ".var"] = (1 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased
        if log_every and (it + 1) % log_every == 0:
            log.info("iteration %d bound %.4f", it + 1, value)
    return TrainResult(model, trace)

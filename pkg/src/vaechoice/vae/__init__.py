"""Variational autoencoder for choice-set generation and implicit perception (BC)."""

from .hyperparams import SEARCH_SPACE, VaeHyperparams
from .iwae import (
    estimate_log_bc,
    generate_alternative,
    generate_alternatives,
    iwae_bound,
    iwae_objective,
    log_weights,
)
from .likelihood import truncnorm_logpdf, truncnorm_sample
from .model import VaeModel, decode_mean, encode, init_model, nest_membership, sample_posterior
from .search import Trial, random_search, rank, run_trials, sample_trials
from .train import TrainResult, train

__all__ = [
    "SEARCH_SPACE",
    "Trial",
    "TrainResult",
    "VaeHyperparams",
    "VaeModel",
    "decode_mean",
    "encode",
    "estimate_log_bc",
    "generate_alternative",
    "generate_alternatives",
    "init_model",
    "iwae_bound",
    "iwae_objective",
    "log_weights",
    "nest_membership",
    "random_search",
    "rank",
    "run_trials",
    "sample_posterior",
    "sample_trials",
    "train",
    "truncnorm_logpdf",
    "truncnorm_sample",
]

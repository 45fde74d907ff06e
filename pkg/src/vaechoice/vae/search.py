"""Random hyperparameter search scored by the test-set sum of ln BC."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericalError
from .hyperparams import SEARCH_SPACE, VaeHyperparams
from .iwae import estimate_log_bc
from .model import VaeModel, init_model
from .train import train

log = logging.getLogger(__name__)


@dataclass
class Trial:
    index: int
    hyperparams: VaeHyperparams
    seed: int
    score: float = -np.inf
    error: str | None = None
    model: VaeModel | None = None


def sample_trials(
    trials: int,
    rng: np.random.Generator,
    space: dict | None = None,
    base: VaeHyperparams | None = None,
    caps: dict | None = None,
) -> list[Trial]:
    """Draw each listed hyperparameter uniformly from its values.

    ``caps`` bounds costly settings (e.g. ``max_iterations``) after sampling.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    space = SEARCH_SPACE if space is None else space
    base = base or VaeHyperparams()
    for name, values in space.items():
        if len(values) == 0:
            raise ConfigError(f"empty value list for {name}")
    out = []
    for i in range(trials):
        chosen = {name: values[int(rng.integers(len(values)))] for name, values in space.items()}
        for name, cap in (caps or {}).items():
            if name in chosen:
                chosen[name] = min(chosen[name], cap)
        seed = int(rng.integers(2**63))
        out.append(Trial(i, base.replace(**chosen), seed))
    return out


def run_trial(trial: Trial, train_x, test_x, lower=0.0, normalization=None) -> Trial:
    init_seq, train_seq, score_seq = np.random.SeedSequence(trial.seed).spawn(3)
    hp = trial.hyperparams
    try:
        model = init_model(train_x.shape[1], hp, np.random.default_rng(init_seq), lower, normalization)
        model = train(model, train_x, np.random.default_rng(train_seq)).model
        bc = estimate_log_bc(model, test_x, hp.mc_draws, np.random.default_rng(score_seq))
        score = float(np.sum(bc))
        if not np.isfinite(score):
            raise NumericalError("non-finite test score")
        trial.score, trial.model = score, model
    except NumericalError as exc:
        trial.score, trial.error = -np.inf, str(exc)
        log.warning("trial %d failed: %s", trial.index, exc)
    return trial


def rank(trials: list[Trial]) -> list[Trial]:
    """Highest score first; failures last; ties broken by trial index."""
    return sorted(trials, key=lambda t: (-t.score if np.isfinite(t.score) else np.inf, t.index))


def run_trials(trials, train_x, test_x, lower=0.0, normalization=None) -> list[Trial]:
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    return rank([run_trial(t, train_x, test_x, lower, normalization) for t in trials])


def random_search(
    train_x,
    test_x,
    trials: int,
    rng: np.random.Generator,
    space: dict | None = None,
    base: VaeHyperparams | None = None,
    caps: dict | None = None,
    lower=0.0,
    normalization=None,
) -> list[Trial]:
    specs = sample_trials(trials, rng, space, base, caps)
    return run_trials(specs, train_x, test_x, lower, normalization)

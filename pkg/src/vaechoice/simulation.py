"""Simulated-choice consistency experiments.

Each synthetic observation gets its own choice set drawn from the VAE,
optionally filtered on BC, and a choice drawn from the simulating family at
the true coefficients.  The same family is then estimated and compared with
the truth.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gev
from .data import ROUTE_SCHEMA, denormalize
from .errors import ConfigError, FilterInfeasibleError
from .estimation import ChoiceData, EstimationResult, ModelSpec, estimate
from .vae import checkpoint
from .vae.iwae import estimate_log_bc, generate_alternatives
from .vae.model import VaeModel, nest_membership

MODES = ("low", "random", "high")
DEFAULT_TRUE_BETA = {
    "Route length detour": -1.5,
    "Route highway/expressway percentage": 1.5,
    "Route city node percentage": 0.5,
}
QUANTILES = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


@dataclass
class ExperimentConfig:
    true_beta: dict = field(default_factory=lambda: dict(DEFAULT_TRUE_BETA))
    n_observations: int = 1000
    n_alternatives: int = 20
    mode: str = "random"
    threshold: float = 0.001  # on BC itself, not its log
    threshold_quantile: float | None = None  # if set, overrides threshold with a pilot quantile
    pilot_draws: int = 5000
    seed: int = 0
    mc_draws: int | None = None  # S for ln BC; the model's own when omitted
    family: str = "IAP-MNL"
    max_draws: int = 100_000
    nest_draws: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.n_observations < 1 or self.n_alternatives < 1:
            raise ConfigError("need at least one observation and one alternative")
        if self.mode != "random" and self.threshold_quantile is None and not self.threshold > 0:
            raise ConfigError("filter threshold must be positive")
        if self.threshold_quantile is not None and not 0 < self.threshold_quantile < 1:
            raise ConfigError("threshold_quantile must lie in (0, 1)")
        if not self.true_beta:
            raise ConfigError("true_beta is empty")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment setting(s): {sorted(unknown)}")
        return cls(**d)


def accepts(log_bc, mode: str, log_tau: float):
    """The mode's keep-rule on ln BC: low keeps BC <= tau, high keeps BC >= tau."""
    log_bc = np.asarray(log_bc)
    if mode == "low":
        return log_bc <= log_tau
    if mode == "high":
        return log_bc >= log_tau
    return np.ones(log_bc.shape, dtype=bool)


@dataclass
class ChoiceSet:
    x_normalized: np.ndarray
    x: np.ndarray  # absolute attributes
    log_bc: np.ndarray
    draws: int
    candidate_log_bc: np.ndarray  # every draw, kept or not


def _to_absolute(model: VaeModel, xn):
    return denormalize(xn, model.normalization) if model.normalization is not None else np.maximum(xn, 0.0)


def generate_filtered_choice_set(
    model: VaeModel,
    n_alternatives: int,
    mode: str,
    rng: np.random.Generator,
    log_tau: float = math.log(0.001),
    S: int | None = None,
    max_draws: int = 100_000,
) -> ChoiceSet:
    """Draw alternatives and keep those passing the mode's rule until ``n_alternatives``."""
    S = S or model.hp.mc_draws
    batch = n_alternatives if mode == "random" else max(4 * n_alternatives, 64)
    kept_x, kept_bc, seen = [], [], []
    draws = 0
    while sum(len(k) for k in kept_x) < n_alternatives:
        if draws >= max_draws:
            raise FilterInfeasibleError(mode, math.exp(log_tau), draws)
        xn = generate_alternatives(model, batch, rng)
        lbc = estimate_log_bc(model, xn, S, rng)
        draws += batch
        seen.append(lbc)
        ok = accepts(lbc, mode, log_tau)
        kept_x.append(xn[ok])
        kept_bc.append(lbc[ok])
    xn = np.concatenate(kept_x)[:n_alternatives]
    lbc = np.concatenate(kept_bc)[:n_alternatives]
    return ChoiceSet(xn, _to_absolute(model, xn), lbc, draws, np.concatenate(seen))


def choice_probabilities(x, attributes, beta: dict, spec: ModelSpec, log_bc=None, alpha=None, avail=None):
    """(N, J) probabilities of ``spec.family`` at coefficients ``beta``."""
    x = np.asarray(x, dtype=np.float64)
    cols = [list(attributes).index(a) for a in spec.attributes]
    b = np.array([beta[a] for a in spec.attributes])
    v = x[:, :, cols] @ b
    avail = np.ones(v.shape, bool) if avail is None else np.asarray(avail, bool)
    base = np.asarray(log_bc) if spec.is_iap else np.zeros(v.shape)
    lbc = np.where(avail, base, -np.inf)
    if spec.is_cnl:
        with np.errstate(divide="ignore"):
            la = np.log(alpha)
        logp = gev.iap_cnl_log_prob(v, lbc, la, spec.mu, spec.scales(alpha.shape[-1]))
    else:
        logp = gev.iap_mnl_log_prob(v, lbc)
    return np.exp(logp)


def simulate_choices(x, attributes, beta: dict, spec: ModelSpec, rng, log_bc=None, alpha=None, avail=None) -> ChoiceData:
    """Draw one chosen index per observation from the family's probabilities."""
    p = choice_probabilities(x, attributes, beta, spec, log_bc, alpha, avail)
    u = rng.random(len(p))
    cdf = np.cumsum(p, axis=1)
    # first index whose cdf strictly exceeds the target: always a positive-probability slot
    chosen = (cdf <= u[:, None] * cdf[:, -1:]).sum(axis=1)
    avail = np.ones(p.shape, bool) if avail is None else np.asarray(avail, bool)
    return ChoiceData(tuple(attributes), x, chosen, avail, log_bc, alpha)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    result: EstimationResult
    true_beta: np.ndarray
    threshold: float | None
    draws: int
    bc_quantiles: dict
    kept_bc_quantiles: dict
    low_power: bool
    provenance: dict

    @property
    def t_truth(self) -> np.ndarray:
        return self.result.t_target

    @property
    def bias_direction(self) -> list[str]:
        d = self.result.beta - self.true_beta
        return ["over" if x > 0 else "under" if x < 0 else "none" for x in d]

    def all_within(self, crit: float = 1.96) -> bool:
        return bool(self.result.se_available and np.all(np.abs(self.t_truth) < crit))

    def format(self) -> str:
        c = self.config
        head = {
            "experiment_mode": c.mode,
            "family": c.family,
            "observations": c.n_observations,
            "alternatives_per_observation": c.n_alternatives,
            "bc_threshold": "none" if self.threshold is None else f"{self.threshold:.6g}",
            "threshold_quantile": c.threshold_quantile,
            "seed": c.seed,
            "candidate_draws": self.draws,
            "converged": self.result.converged,
            "LL0": f"{self.result.ll0:.6f}",
            "LLhat": f"{self.result.ll:.6f}",
            "low_power": self.low_power,
            "ln_bc_quantiles_all_draws": _fmt_q(self.bc_quantiles),
            "ln_bc_quantiles_kept": _fmt_q(self.kept_bc_quantiles),
        }
        head.update(self.provenance)
        lines = [f"# {k}: {v}" for k, v in head.items()]
        lines.append("\t".join(["attribute", "true_beta", "beta_hat", "std", "t_vs_0", "t_vs_truth", "bias"]))
        r = self.result
        for i, name in enumerate(r.spec.attributes):
            lines.append("\t".join([
                name, f"{self.true_beta[i]:g}", f"{r.beta[i]:.4f}", f"{r.se[i]:.4f}",
                f"{r.t_zero[i]:.3f}", f"{self.t_truth[i]:.3f}", self.bias_direction[i],
            ]))
        return "\n".join(lines) + "\n"


def _fmt_q(q: dict) -> str:
    return " ".join(f"q{k}={v:.4f}" for k, v in q.items())


def _quantiles(x) -> dict:
    return {f"{q:g}": float(np.quantile(x, q)) for q in QUANTILES}


def model_fingerprint(model: VaeModel) -> str:
    return hashlib.sha256(checkpoint.dumps(model)).hexdigest()[:16]


def pilot_log_bc(model: VaeModel, n: int, rng, S: int) -> np.ndarray:
    return estimate_log_bc(model, generate_alternatives(model, n, rng), S, rng)


def run_consistency_experiment(model: VaeModel, config: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    attributes = tuple(model.normalization.names) if model.normalization is not None else ROUTE_SCHEMA.names
    spec = ModelSpec(config.family, tuple(config.true_beta))
    missing = [a for a in spec.attributes if a not in attributes]
    if missing:
        raise ConfigError(f"true_beta names unknown attributes: {missing}")
    S = config.mc_draws or model.hp.mc_draws
    pilot_seq, obs_seq, choice_seq, nest_seq = np.random.SeedSequence(config.seed).spawn(4)

    log_tau = None
    if config.mode != "random":
        if config.threshold_quantile is not None:
            pilot = pilot_log_bc(model, config.pilot_draws, np.random.default_rng(pilot_seq), S)
            log_tau = float(np.quantile(pilot, config.threshold_quantile))
        else:
            log_tau = math.log(config.threshold)

    seqs = obs_seq.spawn(config.n_observations)

    def one(seq):
        return generate_filtered_choice_set(
            model, config.n_alternatives, config.mode, np.random.default_rng(seq),
            log_tau if log_tau is not None else 0.0, S, config.max_draws,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sets = list(pool.map(one, seqs))
    else:
        sets = [one(s) for s in seqs]

    x = np.stack([s.x for s in sets])
    log_bc = np.stack([s.log_bc for s in sets])
    alpha = None
    if spec.is_cnl:
        nrng = np.random.default_rng(nest_seq)
        alpha = np.stack([nest_membership(model, s.x_normalized, nrng, config.nest_draws) for s in sets])
    data = simulate_choices(x, attributes, config.true_beta, spec, np.random.default_rng(choice_seq), log_bc, alpha)
    truth = np.array([config.true_beta[a] for a in spec.attributes])
    result = estimate(data, spec, targets=truth)
    low_power = (not result.se_available) or bool(np.any(result.se >= 0.5 * np.abs(truth)))
    all_bc = np.concatenate([s.candidate_log_bc for s in sets])
    provenance = {"model_fingerprint": model_fingerprint(model), "config": _config_line(config)}
    return ExperimentReport(
        config,
        result,
        truth,
        None if log_tau is None else math.exp(log_tau),
        int(sum(s.draws for s in sets)),
        _quantiles(all_bc),
        _quantiles(log_bc),
        low_power,
        provenance,
    )


def _config_line(config: ExperimentConfig) -> str:
    d = asdict(config)
    return ", ".join(f"{k}={d[k]}" for k in sorted(d))

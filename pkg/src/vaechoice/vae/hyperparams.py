"""VAE hyperparameters and the random-search value lists."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class VaeHyperparams:
    latent_dim: int = 3
    encoder_hidden_layers: int = 2
    decoder_hidden_layers: int = 3
    batch_norm: bool = True
    minibatch_size: int = 100
    learning_rate: float = 1e-3
    mc_draws: int = 100
    max_iterations: int = 10000
    decoder_sigma: float = 1.0
    hidden_width: int = 16
    optimizer: str = "sgd"

    def __post_init__(self):
        for name in ("encoder_hidden_layers", "decoder_hidden_layers", "max_iterations", "hidden_width"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("latent_dim", "mc_draws", "minibatch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if (self.encoder_hidden_layers or self.decoder_hidden_layers) and self.hidden_width < 1:
            raise ConfigError("hidden_width must be >= 1 when hidden layers are present")
        # zero is allowed: it appears in the search lists and freezes the weights
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not self.decoder_sigma > 0:
            raise ConfigError("decoder_sigma must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VaeHyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s): {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "VaeHyperparams":
        return VaeHyperparams.from_dict({**self.to_dict(), **kw})


# Value lists sampled by random search.
SEARCH_SPACE = {
    "latent_dim": list(range(1, 11)),
    "encoder_hidden_layers": list(range(0, 7)),
    "decoder_hidden_layers": list(range(0, 7)),
    "batch_norm": [True, False],
    "minibatch_size": [50, 100, 200, 500, 1000],
    "learning_rate": [0.0, 0.1, 0.01, 1e-3, 1e-5],
    "mc_draws": [50, 100, 200, 500, 1000],
    "max_iterations": [500, 1000, 5000, 10000, 20000],
}

"""Choice models with implicit availability/perception and VAE choice sets."""

__version__ = "0.1.0"

"""Asynchronous federated GAN anomaly detection over a HAPS/UAV network, with a
compound-action actor-critic that picks participating UAVs and their positions."""

from .errors import ConfigError, NumericError, ShapeError

__version__ = "0.1.0"
__all__ = ["ConfigError", "NumericError", "ShapeError", "__version__"]

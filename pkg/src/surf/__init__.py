"""Stochastic unrolled decentralized gradient descent for federated learning."""

from surf.errors import ConfigError, FormatError, ParameterError, StateError, StructuralError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FormatError",
    "ParameterError",
    "StateError",
    "StructuralError",
    "__version__",
]

"""Deterministic single-process simulator for asynchronous SGD staleness policies."""

from stalesim.errors import ConfigError, IngestError, NumericError, ProtocolError, SimError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "IngestError",
    "NumericError",
    "ProtocolError",
    "SimError",
    "__version__",
]

class SimError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(SimError, ValueError):
    pass


class IngestError(SimError, ValueError):
    pass


class NumericError(SimError, FloatingPointError):
    """Non-finite values or a corrupted statistic reached the parameters."""


class ProtocolError(SimError, RuntimeError):
    """A server received an update that the protocol cannot produce."""

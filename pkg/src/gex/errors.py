"""Exception hierarchy shared across the package."""


class GexError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(GexError):
    """Malformed or inconsistent hand/glove model document."""


class DimensionError(GexError):
    """Joint vector length does not match the model."""


class ProtocolError(GexError):
    """Invalid packet construction or undecodable frame."""


class BusError(GexError):
    """Virtual bus misuse (duplicate ids, closed transport, ...)."""


class DeviceError(GexError):
    """Device SDK failure: missing servos, disconnected handle, bad command."""


class SolverError(GexError):
    """Retargeting objective became non-finite or config is unusable."""


class ConfigError(GexError):
    """Gateway configuration file missing, malformed, or inconsistent."""

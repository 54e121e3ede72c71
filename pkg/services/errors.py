"""Exception types raised across the squanv services"""


class SquanvError(Exception):
    """Base class for every error the services raise on purpose"""


class ConfigurationError(SquanvError, ValueError):
    """Invalid sizes, indices, geometry or configuration values"""


class IngestionError(SquanvError):
    """Malformed or truncated dataset files"""


class DivergenceError(SquanvError):
    """Training produced a non-finite loss"""


class CheckpointError(SquanvError):
    """Checkpoint file missing, corrupt or from an incompatible format version"""

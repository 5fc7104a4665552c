"""Exception types shared across the package."""


class MelmixError(Exception):
    """Base class for all melmix errors."""


class ConfigError(MelmixError):
    """Invalid configuration values (bad filterbank layout, bad spec JSON, ...)."""


class FormatError(MelmixError):
    """Malformed or unsupported file contents (WAV, TFG1, TVCG, TVDS)."""


class TrainingError(MelmixError):
    """Optimization failure, e.g. the loss became non-finite."""

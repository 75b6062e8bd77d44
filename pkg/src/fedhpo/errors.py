"""Exception types shared across the package."""


class FedHPOError(Exception):
    """Base class for all package errors."""


class ConfigError(FedHPOError, ValueError):
    """Invalid configuration. ``key`` holds the dotted path of the offending entry."""

    def __init__(self, message, key=None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class CapacityError(FedHPOError):
    """Discrete search grid too large to enumerate."""


class DivergenceError(FedHPOError):
    """Training produced a non-finite loss or parameter update."""


class RewardError(DivergenceError):
    """Reward undefined (non-positive or non-finite hyperparameter loss)."""


class PolicyMissingError(FedHPOError):
    """Records carry no policy snapshot (e.g. a baseline run)."""

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class CapacityError(RuntimeError):
    """Problem too large for the exact solvers."""


class ExhaustionError(RuntimeError):
    """Every candidate bundle is excluded for some bidder."""

    def __init__(self, message, bidders=()):
        super().__init__(message)
        self.bidders = tuple(bidders)


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch

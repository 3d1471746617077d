class ConfigError(ValueError):
    """Invalid experiment or controller configuration."""


class DivergenceError(RuntimeError):
    """An adaptive filter blew up."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class ContractViolation(RuntimeError):
    """A caller broke an ordering or state contract (e.g. non-monotone stamps)."""

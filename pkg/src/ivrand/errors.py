"""Exception types shared across the package."""


class IvrandError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(IvrandError):
    """Raised when ingested data violates the dataset contract.

    Carries the complete list of violations, not just the first one
    found, so callers can report everything wrong with a file at once.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


class MechanismError(IvrandError):
    """Invalid assignment-mechanism specification."""


class RedrawLimitError(MechanismError):
    """Degenerate Bernoulli draws exhausted the redraw budget."""


class StatisticError(IvrandError):
    """A balance statistic is undefined for the given inputs."""


class PropensityError(IvrandError):
    """Logistic fit cannot be attempted (bad labels or design matrix)."""


class CapExceededError(IvrandError):
    """An enumeration would exceed the configured size cap."""

"""Exception hierarchy."""


class TreeQMSError(Exception):
    """Base class for all package errors."""


class TreeError(TreeQMSError, ValueError):
    pass


class InvalidSubtreeError(TreeError):
    pass


class RegionError(TreeQMSError, ValueError):
    """An operator was used outside the region it lives on."""


class SiteDimensionError(TreeQMSError, ValueError):
    pass


class BudgetExceededError(TreeQMSError):
    """The dense path would exceed the configured size."""


class IdentityPreservationError(TreeQMSError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NotPositiveError(TreeQMSError, ValueError):
    pass


class SolverError(TreeQMSError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class UnsupportedModelError(TreeQMSError, ValueError):
    pass


class ConfigError(TreeQMSError, ValueError):
    pass

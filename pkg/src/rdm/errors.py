"""Exception and warning types raised across the package."""


class RDMError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RDMError, ValueError):
    pass


class DegenerateSpectrumError(RDMError, ValueError):
    """Raised when a spectrum has no mass (all eigenvalues zero)."""


class FilterDomainError(RDMError, ValueError):
    """A spectral filter produced a non-finite value."""

    def __init__(self, filter_name, sigma):
        self.filter_name = filter_name
        self.sigma = float(sigma)
        super().__init__(f"filter {filter_name!r} is not finite at sigma={self.sigma!r}")


class SingularMatrixError(RDMError, ValueError):
    pass


class DivergenceError(RDMError, ArithmeticError):
    """A trajectory produced a non-finite value."""

    def __init__(self, step, what="state"):
        self.step = int(step)
        super().__init__(f"non-finite {what} at step {self.step}")


class ConfigError(RDMError, ValueError):
    pass


class DegenerateDirectionWarning(UserWarning):
    """An eigenvector was mapped to zero while measuring alignment."""


class FilterUsageWarning(UserWarning):
    """A filter is applied on the branch its monotonicity does not suit."""

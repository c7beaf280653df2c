"""Exception and warning types shared across the package."""


class GacmError(Exception):
    """Base class for all package errors."""


class DomainError(GacmError, ValueError):
    """An evaluation point lies outside the supported domain."""


class DegenerateDataError(GacmError, ValueError):
    """Input data cannot support the requested construction (e.g. constant column)."""


class CenteringError(GacmError, ValueError):
    """Empirical centering is impossible (zero mean of the first basis function)."""


class StructuralError(GacmError, ValueError):
    """Shapes or layouts of inputs are inconsistent."""


class NumericalError(GacmError, RuntimeError):
    """A linear solve or objective became numerically unusable."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NothingSelectedError(GacmError, ValueError):
    """An operation requiring a nonempty selected set received an empty one."""


class DegenerateDataWarning(UserWarning):
    """Data forced a reduced construction (e.g. collapsed duplicate knots)."""

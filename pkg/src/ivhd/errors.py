"""Typed errors shared across the package.

Every error the public surface can raise derives from IvhdError so callers
(CLI included) can catch one base class and map it to an exit code.
"""


class IvhdError(Exception):
    """Base class for all package errors."""


class MalformedInputError(IvhdError):
    """A file failed to parse. Carries the offending row when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class DimensionMismatchError(IvhdError):
    """Shapes or widths are inconsistent."""


class InvalidArgumentError(IvhdError):
    """An argument is outside its documented domain."""


class DegenerateMetricError(IvhdError):
    """The metric cannot be evaluated on a row (e.g. zero-norm vector under cosine)."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class NumericalDivergenceError(IvhdError):
    """An embedding update produced non-finite coordinates.

    The last finite state is preserved on the exception so a caller can
    inspect or checkpoint it.
    """

    def __init__(self, iteration, state=None):
        super().__init__(f"embedding diverged at iteration {iteration}")
        self.iteration = iteration
        self.state = state

"""Exception hierarchy shared by all modules."""


class DgeapError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(DgeapError, ValueError):
    """An argument or configuration value is outside its valid range."""


class ParseError(DgeapError, ValueError):
    """A text file could not be parsed."""

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class NumericalError(DgeapError, RuntimeError):
    """Base for failures of a numerical procedure (CLI exit code 2)."""


class PackingError(NumericalError):
    """A circle could not be placed without overlap."""

    def __init__(self, message, index, placed, partial=None):
        self.index = index
        self.placed = placed
        self.partial = partial  # Substrate of the circles placed so far
        super().__init__(message)


class SamplingError(NumericalError):
    """Rejection sampling accepted too few candidates."""


class InstabilityError(NumericalError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message, t):
        self.t = t
        super().__init__(message)


class DegenerateFieldError(NumericalError):
    """A field cannot be normalized into a density."""


class DegenerateFitError(NumericalError):
    """Fitted covariance is not positive definite."""

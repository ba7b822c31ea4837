"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateInputError(ValueError):
    """Input data carry no usable variation (constant series, all ties, zero variance)."""


class NumericalError(ArithmeticError):
    """A numerical routine (quadrature, root-finding) failed to reach its tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    achieved : float, optional
        Error estimate reached before giving up.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ParseError(ValueError):
    """Malformed input file; ``line`` is the 1-based offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

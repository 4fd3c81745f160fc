"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PrevalestError(Exception):
    exit_code = 1


class InvalidInputError(PrevalestError, ValueError):
    exit_code = 2


class SingularSystemError(PrevalestError, ArithmeticError):
    """Raised when a linear system cannot be solved uniquely.

    ``rank_report`` holds the singular-value diagnostics when they are available.
    """

    exit_code = 3

    def __init__(self, message, rank_report=None):
        super().__init__(message)
        self.rank_report = rank_report


class ConvergenceError(PrevalestError):
    exit_code = 4

"""Exception hierarchy. CLI exit codes hang off these classes."""


class CroccoSplitError(Exception):
    exit_code = 1


class ConfigError(CroccoSplitError):
    """Bad or inconsistent run configuration."""

    exit_code = 2

    def __init__(self, message, key=None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class DataError(CroccoSplitError):
    """Scenario data violates a structural or sign condition."""

    exit_code = 3


class GeometryError(CroccoSplitError):
    exit_code = 3


class SolverError(CroccoSplitError):
    """A sub-step solver failed hard (Newton breakdown, positivity loss)."""

    exit_code = 3


class PositivityError(SolverError):
    def __init__(self, message, column=None):
        self.column = column
        super().__init__(message)


class InvariantViolation(SolverError):
    """A structural invariant of the scheme was broken at runtime."""


class VerificationFailure(CroccoSplitError):
    exit_code = 4

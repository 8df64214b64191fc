"""Exception hierarchy. Each class maps to one CLI exit code."""


class TsrecError(Exception):
    exit_code = 1


class ConfigError(TsrecError, ValueError):
    """Invalid configuration or parameters."""

    exit_code = 2


class DataError(TsrecError, ValueError):
    """Input data that cannot be used (bad rows, too short, non-finite)."""

    exit_code = 3


class NumericalError(TsrecError, ArithmeticError):
    """Training or fitting diverged."""

    exit_code = 4

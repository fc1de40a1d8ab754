"""Exception hierarchy.

Each class carries the process exit code the command-line front end uses
when the error escapes a subcommand.
"""


class DPTCopulaError(Exception):
    exit_code = 1


class UsageError(DPTCopulaError, ValueError):
    """Invalid arguments: wrong level, bad mode string, nonpositive weight."""

    exit_code = 2


class ConfigError(UsageError):
    """An experiment config violates the schema."""


class DataError(DPTCopulaError, ValueError):
    """Input data is malformed or inconsistent."""

    exit_code = 3


class DomainError(DataError):
    """A value lies outside the domain of an operation."""


class NumericError(DPTCopulaError, ArithmeticError):
    """An iterative numerical routine failed to converge."""

    exit_code = 4

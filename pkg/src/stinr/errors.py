"""Exception hierarchy shared across the package.

Exit codes used by the CLI: 0 success, 1 config error, 2 data error,
3 numerical failure.
"""


class StinrError(Exception):
    exit_code = 1


class ConfigError(StinrError):
    """Bad or inconsistent configuration."""

    exit_code = 1


class DataError(StinrError):
    """Malformed input data or violated data invariants."""

    exit_code = 2


class NumericalError(StinrError):
    """Non-finite values or numerical breakdown during optimization."""

    exit_code = 3

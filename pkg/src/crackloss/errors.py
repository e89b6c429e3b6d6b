"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, OSError -> 2,
NumericalError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration value; message names the offending key."""


class NumericalError(RuntimeError):
    """Non-finite loss or a failed gradient check."""


class PgmParseError(ValueError):
    """Malformed PGM file; message includes the byte offset of the problem."""

"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration / data-format problems
exit with 2, numerical failures with 1.
"""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent run setup."""


class DataFormatError(ConfigError):
    """A delimited-text input violated its schema; message carries the line number."""


class NumericalError(RuntimeError):
    """A numerical operation failed or produced a non-finite result."""

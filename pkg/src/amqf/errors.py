"""Exception types shared across the package.

The CLI maps these onto exit codes: validation 2, I/O 3, numeric 4.
I/O problems use the builtin ``OSError`` family directly.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ConfigError(ValidationError):
    """Inconsistent or unknown configuration."""


class NumericError(ArithmeticError):
    """A loss or score became non-finite."""

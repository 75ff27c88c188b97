"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific one that applies.
"""


class NvzenoError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(NvzenoError):
    """Invalid or inconsistent user-supplied configuration."""


class BudgetError(NvzenoError):
    """A configured size/count budget would be exceeded."""


class NumericalError(NvzenoError):
    """A numerical sanity check failed (non-finite values, broken unitarity)."""

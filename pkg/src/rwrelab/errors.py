"""Exception types shared across the package."""


class UsageError(ValueError):
    """Invalid configuration, bad parameters, or a violated precondition."""


class NumericalError(RuntimeError):
    """A numerical routine failed its stability or tolerance contract."""

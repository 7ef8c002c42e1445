"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """A solver or training loop produced non-finite values (CLI exit code 3)."""

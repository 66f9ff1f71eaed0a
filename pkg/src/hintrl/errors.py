"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value; `path` names the offending key when known."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class UsageError(RuntimeError):
    """An API was called in a state its contract forbids."""


class Unsolvable(RuntimeError):
    """No success-reaching action sequence exists within the remaining step budget."""

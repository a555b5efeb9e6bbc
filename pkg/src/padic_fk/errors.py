class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NumericRangeError(ArithmeticError):
    """A truncation bound cannot be certified inside the allowed window."""

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad configuration: shape mismatches, out-of-range knobs, missing pieces."""


class NumericError(ArithmeticError):
    """Non-finite values showed up where they must not (forward/backward/training)."""


class DataFormatError(ValueError):
    """A dataset or artifact file does not match its expected binary/JSON layout."""

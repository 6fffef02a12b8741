"""Exception types raised by fedadp."""


class FedAdpError(Exception):
    """Base class for all fedadp errors."""


class DimensionError(FedAdpError, ValueError):
    """Array shapes do not line up."""


class UsageError(FedAdpError, ValueError):
    """An argument is outside its documented domain."""


class FormatError(FedAdpError, ValueError):
    """A file does not follow the expected binary layout."""


class LengthError(FormatError):
    """A file is truncated or its record counts disagree."""


class DataError(FedAdpError, ValueError):
    """File contents are well-formed but hold out-of-range values."""


class ConfigError(FedAdpError, ValueError):
    """An experiment configuration is invalid.

    ``key`` is the dotted path of the offending field, when there is one.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key

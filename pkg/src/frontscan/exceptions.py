class FrontscanError(Exception):
    """Base class for all errors raised by frontscan."""


class DataError(FrontscanError):
    """Chain data is missing, malformed or inconsistent."""


class OracleError(FrontscanError):
    """An execution oracle could not simulate the requested ordering."""


class ConfigError(FrontscanError):
    """Invalid configuration file or parameter value."""


"""Exception types shared across the ingest, fitting and analysis stages."""


class VpwaveError(Exception):
    """Base class for every error raised deliberately by this package."""


class EmptyInput(VpwaveError):
    pass


class ParseError(VpwaveError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DomainError(VpwaveError, ValueError):
    """A value lies outside the domain an operation is defined on."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DegenerateDay(VpwaveError):
    """A trading day has no volume, or too few distinct prices to fit."""


class ZeroVariance(VpwaveError):
    pass


class TooFewDays(VpwaveError):
    pass


class TooFewPairs(VpwaveError):
    pass


class ConfigError(VpwaveError):
    pass


class IoError(VpwaveError):
    pass

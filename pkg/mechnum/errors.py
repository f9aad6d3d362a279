from __future__ import annotations


class MechnumError(Exception):
    def __init__(self, message: str, cause: Exception | None = None):
        super().__init__(message)
        self.cause = cause


class DomainError(MechnumError):
    """An argument lies outside the domain of a function."""


class UnsupportedKindError(MechnumError):
    pass


class PreconditionError(MechnumError):
    pass


class MechanismConfigError(MechnumError):
    pass


class InconsistencyError(MechnumError):
    pass


class UnsupportedScaleError(MechnumError):
    pass


class ConfigError(MechnumError):
    pass

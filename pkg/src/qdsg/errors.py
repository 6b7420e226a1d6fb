"""Exception types shared across the package."""


class QDSGError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(QDSGError, ValueError):
    """Invalid user-supplied configuration or parameter."""


class InvariantError(QDSGError, RuntimeError):
    """A runtime invariant of the iteration was violated."""


class ConnectivityError(QDSGError, RuntimeError):
    """Graph generation could not produce a connected network."""

    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = attempts

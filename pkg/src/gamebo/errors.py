"""Exception hierarchy shared across the package."""


class GameBOError(Exception):
    """Base class for all package errors."""


class ValidationError(GameBOError, ValueError):
    """Inputs violate a documented precondition."""


class AnchorError(ValidationError):
    """Utopia and disagreement points do not satisfy ``u_i < d_i``."""

    def __init__(self, message, coordinates=()):
        super().__init__(message)
        self.coordinates = tuple(coordinates)


class FactorizationError(GameBOError, ArithmeticError):
    """A covariance matrix could not be factorized even with maximal jitter."""


class ConfigError(ValidationError):
    """A run configuration is malformed or inconsistent."""


class BlackBoxError(GameBOError, RuntimeError):
    """The black-box evaluator failed.

    ``raw`` keeps the offending line (or stderr excerpt) verbatim.
    """

    def __init__(self, message, raw=None):
        super().__init__(message if raw is None else f"{message}: {raw!r}")
        self.raw = raw

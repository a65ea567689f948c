"""Exception hierarchy shared by all modules."""


class TwoPhaseError(Exception):
    """Base class for errors raised by this package."""


class InvalidDimension(TwoPhaseError, ValueError):
    pass


class DegenerateExtent(TwoPhaseError, ValueError):
    pass


class IndexOutOfRange(TwoPhaseError, IndexError):
    pass


class QuadratureFailure(TwoPhaseError, ArithmeticError):
    pass


class NonPositiveWeight(TwoPhaseError, ValueError):
    pass


class CoefficientValidationError(TwoPhaseError, ValueError):
    pass


class MissingMetadata(TwoPhaseError, ValueError):
    pass


class SingularSystem(TwoPhaseError, ArithmeticError):
    pass


class ConstraintConflict(TwoPhaseError, ValueError):
    pass


class ConfigError(TwoPhaseError, ValueError):
    pass


class MaxItersExceeded(TwoPhaseError, RuntimeError):
    """The L-scheme did not reach its tolerance.

    The partial iteration history is kept on ``self.history``.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class MissingSnapshot(TwoPhaseError, ValueError):
    pass


class InsufficientRows(TwoPhaseError, ValueError):
    pass


class TooFewIterations(TwoPhaseError, ValueError):
    pass


class IoFailure(TwoPhaseError, OSError):
    pass

"""Exception types raised across the package."""


class DomainAdaptError(Exception):
    """Base class for every error raised by this package."""


class ParseError(DomainAdaptError, ValueError):
    """A file does not conform to its declared format."""

    def __init__(self, message, *, line=None, offset=None):
        where = ""
        if line is not None:
            where = f"line {line}: "
        elif offset is not None:
            where = f"byte offset {offset}: "
        super().__init__(where + message)
        self.line = line
        self.offset = offset


class ValidationError(DomainAdaptError, ValueError):
    """Input violates a documented invariant or precondition."""


class InsufficientDataError(ValidationError):
    """Too few samples, speakers or utterances for the requested fit."""


class DegenerateKeysError(ValidationError):
    """A trial list has no target or no non-target trials."""


class DegenerateInputError(DomainAdaptError, ValueError):
    """A vector that must be nonzero is zero."""


class TrialLookupError(DomainAdaptError, LookupError):
    """A trial references an utterance id that was not supplied."""


class ModelStateError(DomainAdaptError, RuntimeError):
    """A model stage required by the operation was not fitted."""


class NumericalError(DomainAdaptError, ArithmeticError):
    """A numerical routine failed or its input is ill-posed."""


class NotPSDError(NumericalError):
    """A matrix expected to be positive semi-definite is not."""


class SingularMatrixError(NumericalError):
    """A matrix that must be inverted is singular or too ill-conditioned."""


class DegenerateSpectrumError(NumericalError):
    """An eigenvalue spectrum has zero spread and cannot be standardized."""

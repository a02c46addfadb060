"""Exception hierarchy shared by all modules."""


class ReachCodesignError(Exception):
    pass


class InvalidArgumentError(ReachCodesignError, ValueError):
    pass


class OutOfDomainError(ReachCodesignError, ValueError):
    """A query fell outside the tabulated domain.

    ``axis`` names the offending coordinate.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class NumericalError(ReachCodesignError):
    """Base for failures of an iterative numerical procedure."""


class TrimFailureError(NumericalError):
    def __init__(self, message, residual=None, iterate=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate


class SaturatedTrimError(TrimFailureError):
    pass


class RiccatiError(NumericalError):
    pass


class HorizonTooLongError(RiccatiError):
    pass


class ObjectiveEvaluationError(NumericalError):
    """An objective or constraint could not be evaluated at ``design``."""

    def __init__(self, message, design=None, cause=None):
        super().__init__(message)
        self.design = design
        self.cause = cause

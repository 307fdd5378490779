"""Exception and warning types raised across the package."""


class LVInvError(Exception):
    """Base class for all package errors."""


class ValidationError(LVInvError):
    """Bad user input: parameters, configuration, grids."""


class NumericalError(LVInvError):
    """A computation could not produce a trustworthy number."""


class DenominatorZero(NumericalError):
    pass


class InvalidParam(ValidationError):
    pass


class TooManyModes(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class NegativeData(ValidationError):
    """Assembled initial data is negative somewhere (epsilon too large)."""


class NonFiniteState(NumericalError):
    pass


class IllConditionedStencil(NumericalError):
    pass


class MissingLowerOrder(ValidationError):
    pass


class SignLoss(NumericalError):
    pass


class DegenerateData(NumericalError):
    pass


class RankDeficient(NumericalError):
    """Design matrix cannot determine every unknown coefficient.

    ``unidentifiable`` lists the coefficient labels (e.g. ``"F_11"``) whose
    value is not fixed by the data.
    """

    def __init__(self, message, unidentifiable=()):
        super().__init__(message)
        self.unidentifiable = list(unidentifiable)


class InconsistentTable(NumericalError):
    pass


class NegativeStateWarning(UserWarning):
    """A forward solution dipped below zero beyond round-off."""

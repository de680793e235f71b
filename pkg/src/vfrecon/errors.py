"""Exception hierarchy.

Two families matter to callers (and to the CLI exit codes): precondition
failures on the inputs, and numerical failures of a well-formed problem.
"""


class ValidationError(ValueError):
    """Inputs violate a documented precondition."""


class GridMismatchError(ValidationError):
    pass


class SchemeError(ValidationError):
    """Phase-shift parameters that cannot separate the polarisations."""


class NumericalError(ArithmeticError):
    """A well-formed problem that cannot be solved reliably."""


class IllConditionedError(NumericalError):
    def __init__(self, message, singular_value=None):
        super().__init__(message)
        self.singular_value = singular_value


class RankDeficientError(NumericalError):
    pass


class DegenerateFitError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass

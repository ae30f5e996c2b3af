"""Exception hierarchy.

Two families matter for the CLI exit codes: ``ValidationError`` covers bad
input (files, columns, specs), ``NumericalError`` covers estimation failures
(rank, convergence, separation).
"""


class CbpsDidError(Exception):
    """Base class for all package errors."""


class ValidationError(CbpsDidError):
    """Invalid input data or configuration."""


class MissingColumn(ValidationError):
    """A required column is absent from the input file."""


class NonBinaryTreatment(ValidationError):
    """Treatment column contains a value other than 0 or 1."""


class NonFiniteValue(ValidationError):
    """A cell failed to parse as a finite number."""


class UnknownTerm(ValidationError):
    """A covariate-spec term references a column that does not exist."""


class InvalidSpec(ValidationError):
    """A covariate-spec file could not be parsed."""


class ConstantTreatment(ValidationError):
    """All units share one treatment status; estimation is impossible."""


class NumericalError(CbpsDidError):
    """Estimation failed for numerical reasons."""


class RankDeficient(NumericalError):
    """A design or cross-moment matrix is rank deficient."""

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class TooFewControls(NumericalError):
    """Fewer control units than regression coefficients."""


class Separation(NumericalError):
    """Logistic likelihood is unbounded (perfectly predicted treatment)."""


class NoConvergence(NumericalError):
    """An iterative solver hit its iteration cap or stalled."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class SingularJacobian(NumericalError):
    """The stacked-moment Jacobian is not invertible."""

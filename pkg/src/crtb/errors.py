"""Exception and warning types raised by the package."""


class CrtbError(Exception):
    """Base class for all errors raised by crtb."""


class InvalidInputError(CrtbError, ValueError):
    """Arguments violate a precondition (shape, range, emptiness)."""


class DegenerateError(CrtbError, ArithmeticError):
    """A scale, matrix or distance set is degenerate (zero where positivity is needed)."""


class NoAssociationError(DegenerateError):
    """The cross-covariance between the two blocks is numerically zero."""


class RankDeficiencyError(DegenerateError):
    """Scores or the weight/loading system are rank deficient."""


class DegenerateColumnWarning(UserWarning):
    """A column has zero robust (and possibly classical) scale."""


class DegenerateRowWarning(UserWarning):
    """Rows carried no usable cells during weight initialisation."""

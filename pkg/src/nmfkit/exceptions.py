"""Exception types shared across the package."""


class MatrixSizeError(ValueError):
    """Operand dimensions are inconsistent or an allocation would overflow."""


class DataDomainError(ValueError):
    """Input data contains negative, NaN, or infinite values."""


class ParseError(ValueError):
    """A dataset file is malformed; message carries path and line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class DegenerateProblemError(RuntimeError):
    """Every diagonal entry of the quadratic form is (numerically) zero,
    so the objective is linear in every variable and rescaling is undefined."""


class NumericalFailureError(RuntimeError):
    """A solve produced NaN/Inf or an unbounded descent direction.

    Attributes carry enough context to report where it happened:
    ``last_x`` is the last finite iterate (may be None), ``index`` the
    failing column/row when raised from the factorization driver, and
    ``log`` the convergence log up to the failure point.
    """

    def __init__(self, message, last_x=None, index=None, log=None):
        super().__init__(message)
        self.last_x = last_x
        self.index = index
        self.log = log

"""Exception hierarchy shared across the package."""


class TrimetaError(Exception):
    """Base class for all errors raised by trimeta."""


class InputError(TrimetaError, ValueError):
    """Invalid user-supplied data or arguments."""


class DatasetParseError(InputError):
    """A dataset file could not be parsed.

    ``row`` is 1-based counting the header as row 1; ``column`` names the
    offending field when known.
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class NumericalError(TrimetaError, ArithmeticError):
    """Base class for failures of the numerical kernels."""


class DomainError(NumericalError, ValueError):
    """Argument outside the domain of a numerical function."""


class BracketError(NumericalError):
    """Root-finding bracket endpoints do not straddle a root."""


class ConvergenceError(NumericalError):
    """Iteration budget exhausted before reaching tolerance."""

    def __init__(self, message, best=None, residual=None):
        self.best = best
        self.residual = residual
        if best is not None:
            message = f"{message} (best iterate {best!r}, residual {residual!r})"
        super().__init__(message)


class InfeasibleTrimError(NumericalError):
    """Solved trim bounds cross, so no study mass lies between them."""


class DegenerateTrimError(NumericalError):
    """Trimming left fewer studies than a fit requires."""

    def __init__(self, message, retained):
        self.retained = retained
        super().__init__(f"{message} (retained {retained})")


class SearchError(TrimetaError):
    """The trimming-proportion search found no feasible cell."""

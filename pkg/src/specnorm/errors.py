"""Exception hierarchy shared across the package."""


class SpecNormError(Exception):
    """Base class for all package errors."""


class ValidationError(SpecNormError, ValueError):
    """Bad arguments or malformed input (CLI exit code 2)."""


class NumericError(SpecNormError, ArithmeticError):
    """Numerical failure during a computation (CLI exit code 3)."""


class ZeroScale(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SizeMismatch(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class BadFraction(ValidationError):
    pass


class PatchTooLarge(ValidationError):
    pass


class Empty(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class NotBlockDiagonal(ValidationError):
    pass


class NonPositiveDegree(NumericError):
    pass


class ConvergenceFailure(NumericError):
    pass


class NearCrossing(NumericError):
    """Eigenvalue pairs closer than the gap floor in the eigenvector variation formula."""

    def __init__(self, pairs):
        self.pairs = list(pairs)
        shown = ", ".join(f"({k},{j})" for k, j in self.pairs[:10])
        more = "" if len(self.pairs) <= 10 else f" ... {len(self.pairs) - 10} more"
        super().__init__(f"near eigen-crossings skipped: {shown}{more}")


class GapTooSmall(NumericError):
    pass

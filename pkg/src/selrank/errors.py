"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class SelrankError(Exception):
    pass


class DataError(SelrankError, ValueError):
    """Input data violates a schema or a dataset invariant."""


class NumericError(SelrankError, ArithmeticError):
    """A computation produced a non-finite value or hit a singularity."""


class ShapeError(SelrankError, ValueError):
    """Operands of a tensor op have incompatible shapes."""

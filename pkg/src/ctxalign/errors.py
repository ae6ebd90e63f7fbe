"""Exception types shared across the package.

DataError covers malformed or inconsistent inputs (files, indices,
shapes declared by the caller); NumericError covers failures inside
numerical routines (non-finite values, degenerate geometry).
"""


class DataError(ValueError):
    """Input data violates a format or consistency requirement."""


class NumericError(ArithmeticError):
    """A numerical routine hit a degenerate or non-finite condition."""

"""Exception types shared across the package.

The CLI maps these onto exit codes: InputError and its subclasses exit
with 1, NumericError with 2.
"""


class InputError(ValueError):
    """A caller supplied arguments that violate an operation's contract."""


class DataFormatError(InputError):
    """A data file (CSV/JSON/checkpoint) is malformed or inconsistent."""


class NumericError(ArithmeticError):
    """A computation produced non-finite or otherwise invalid numbers."""

"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: parse/data problems are exit 2,
numeric/invariant failures are exit 3, usage errors are exit 1.
"""


class PaeffError(Exception):
    """Base class for all package errors."""


class DimensionError(PaeffError):
    """Operand shapes are incompatible with the requested operation."""


class IndexOutOfRangeError(PaeffError):
    """An index (class target, axis, gallery position) is out of range."""


class ContractError(PaeffError):
    """A documented precondition was violated by the caller."""


class NumericError(PaeffError):
    """A value is non-finite or outside its numeric domain."""


class DataError(PaeffError):
    """Dataset content violates an invariant (missing modality, bad dims)."""


class ParseError(PaeffError):
    """A file could not be parsed; message carries the line number."""

"""Exception types shared across the package.

The CLI maps these onto exit codes: input/format/dimension/usage problems
exit with 1, numerical failures (NaN/Inf, diverged training) with 2.
"""


class DimensionError(ValueError):
    """Shapes or extents are incompatible with an operation."""


class InputError(ValueError):
    """Caller-supplied data violates a precondition (range, pairing, size)."""


class FormatError(ValueError):
    """A file does not follow its declared on-disk format."""


class UsageError(ValueError):
    """An API was called in an unsupported way (e.g. backward on a non-scalar)."""


class NumericalError(ArithmeticError):
    """A computation produced NaN/Inf or otherwise left the valid domain."""

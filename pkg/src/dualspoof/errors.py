"""Exception types shared across the package.

Every module raises one of these so callers (and the CLI) can map failures
to exit codes without string matching.
"""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class FormatError(ValueError):
    """A file or container is malformed; the message names the offending field."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but too degenerate to process (silent clip, empty sequence)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""

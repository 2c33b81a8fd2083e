"""Exception types shared across the package."""


class FormatError(ValueError):
    """Input text does not parse (CoNLL-U, PTB brackets, JSON documents).

    Carries the 1-based ``line`` for line-oriented formats and the 0-based
    ``offset`` (in bytes) for bracketed text, when known.
    """

    def __init__(self, message, *, line=None, offset=None):
        if line is not None:
            message = f"line {line}: {message}"
        elif offset is not None:
            message = f"byte {offset}: {message}"
        super().__init__(message)
        self.line = line
        self.offset = offset


class StructureError(ValueError):
    """Input parses but violates a structural invariant (cycles, bad ids,
    kind mismatches, inconsistent dimensions)."""


class DegenerateRowError(StructureError):
    """An attention row has no allowed key under the given mask."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""

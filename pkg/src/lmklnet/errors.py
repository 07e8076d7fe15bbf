"""Exception types shared across the package."""


class LMKLError(Exception):
    """Base class for all errors raised by lmklnet."""


class ParseError(LMKLError, ValueError):
    """A LIBSVM line could not be tokenized."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class FormatError(LMKLError, ValueError):
    """Input is syntactically valid but violates a format rule."""


class SizeError(FormatError):
    """Binary payload is shorter or longer than its header declares."""


class MemoryGuardError(LMKLError, MemoryError):
    """A kernel build would exceed the configured memory budget."""


class NonFiniteError(LMKLError, FloatingPointError):
    """A loss or gradient became NaN or infinite."""

"""Exception hierarchy shared across the package.

Every user-facing error derives from :class:`LoopforgeError` so the CLI can
distinguish bad input (exit code 1) from internal invariant violations
(exit code 2, plain Python exceptions).
"""


class LoopforgeError(Exception):
    """Base class for all diagnosable errors.

    *span* is an optional (filename, line, column) triple; any element may
    be None when unknown.
    """

    def __init__(self, message, span=None):
        super().__init__(message)
        self.message = message
        self.span = span

    def __str__(self):
        if self.span is None:
            return self.message
        fname, line, col = self.span
        parts = [p for p in (fname, line, col) if p is not None]
        loc = ":".join(str(p) for p in parts)
        return f"{loc}: {self.message}" if loc else self.message


class ParseError(LoopforgeError):
    pass


class NonAffineError(ParseError):
    pass


class ValidationError(LoopforgeError):
    pass


class TransformError(LoopforgeError):
    pass


class ScheduleError(LoopforgeError):
    pass


class CodegenError(LoopforgeError):
    pass


class InterpError(LoopforgeError):
    pass


class RestrictionError(ParseError):
    """A Fortran construct outside the supported subset."""

    def __init__(self, construct, span=None):
        super().__init__(
            f"unsupported Fortran construct: {construct}", span=span)
        self.construct = construct

"""Exception hierarchy shared by all pipeline stages."""


class HeatkerError(Exception):
    """Base class for all heatker errors."""


class MalformedIndexing(HeatkerError):
    """An index label occurs more than twice, or twice with equal variance."""


class UnknownIndex(HeatkerError):
    """A requested index is not free in the expression."""


class ArityMismatch(HeatkerError):
    """Pattern and replacement index counts do not line up."""


class OutOfRange(HeatkerError):
    """A factor or derivative position does not exist."""


class UnsolvableOrder(HeatkerError):
    """A coincidence-limit bootstrap step degenerated (rewrite bug)."""


class VersionMismatch(HeatkerError):
    """Cache file written by an incompatible serialization version."""


class FlagMismatch(HeatkerError):
    """Cache file background flags differ from the requested ones."""


class CorruptFile(HeatkerError):
    """Cache file failed its checksum or cannot be parsed."""


class NotInvertible(HeatkerError):
    """The principal symbol is not invertible by the g/kk ansatz."""


class MissingColimOrder(HeatkerError):
    """A coincidence limit of higher order than the table provides."""


class OddIndexCount(HeatkerError):
    """Symmetrized metric products need an even number of indices."""


class UnmatchedIntegrand(HeatkerError):
    """A scalar part outside the closed-form momentum-integral shapes."""


class ParseError(HeatkerError):
    """Malformed operator specification text."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class UnsupportedShape(HeatkerError):
    """Operator outside the invertible-principal-symbol class."""


class ResourceGuard(HeatkerError):
    """The run exceeded the configured resource limits."""


class InternalInvariant(HeatkerError):
    """An internal pipeline invariant was violated."""

"""Exception types shared across the verifier."""


class CondsafeError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(CondsafeError):
    """Malformed source text; carries a 1-based line:column position."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        if line is not None:
            message = f"{line}:{col}: {message}"
        super().__init__(message)
        self.line = line
        self.col = col


class DisequalityNotAllowedHere(ParseError):
    """`!=` appeared inside a transition relation; split the transition instead."""


class UnknownLocation(CondsafeError):
    """A location name does not exist in the program."""


class IncompleteValuation(CondsafeError):
    """A valuation is missing a variable needed to evaluate a constraint."""


class EmptyConjunction(CondsafeError):
    """Negation of an empty conjunction is undefined at this call site."""


class EncoderError(CondsafeError):
    """Constraint encoding failed (column mismatch, bad assertion shape)."""


class ModelIncomplete(CondsafeError):
    """A solver model does not assign some required symbol."""


class BackendError(CondsafeError):
    """The external SMT solver process died or could not be started."""


class ProtocolError(CondsafeError):
    """The solver produced output we cannot parse."""


class BudgetExceeded(CondsafeError):
    """Explicit state enumeration exceeded its state/step budget."""


class GlobalDeadlineExceeded(CondsafeError):
    """The per-run wall clock budget ran out."""


class InternalSoundnessError(CondsafeError):
    """A result failed its own re-validation; indicates a bug, never user error."""

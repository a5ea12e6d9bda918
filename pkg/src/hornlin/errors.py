"""Exception types shared across the package."""


class HornlinError(Exception):
    pass


class ParseError(HornlinError):
    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, col {col})"
        super().__init__(message)


class SpecError(HornlinError):
    """Malformed or inconsistent specification triple."""


class EncodeError(HornlinError):
    """Program/spec combination cannot be encoded."""


class ResourceLimit(HornlinError):
    """Exact elimination exceeded its intermediate-row budget."""


class BudgetExhausted(HornlinError):
    """Bounded search ran out of branch steps before reaching a verdict."""

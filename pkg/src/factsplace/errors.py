"""Exception hierarchy shared by the library and the CLI."""


class FactsError(Exception):
    """Base class for every error raised by factsplace."""


class ParseError(FactsError):
    """Malformed case-file text. Carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(FactsError):
    """Input parsed fine but holds physically invalid values."""


class ValidationError(FactsError):
    """A model, scenario or document violates a structural invariant."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class PowerFlowError(FactsError):
    """DC power flow cannot be solved (imbalance, islanding, singularity)."""


class LpError(FactsError):
    """The LP backend broke down numerically; distinct from an infeasible LP."""

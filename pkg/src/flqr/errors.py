"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class FLQRError(Exception):
    """Base class for all library errors."""


class InvalidArgument(FLQRError, ValueError):
    pass


class OutOfRange(FLQRError, ValueError):
    pass


class DomainError(FLQRError, ValueError):
    """Raised when a quantity is undefined at the requested point (e.g. t = T)."""


class ValidationError(InvalidArgument):
    """Problem data violates a structural assumption (symmetry, PSD, coercivity)."""


class SolverFailure(FLQRError, RuntimeError):
    """A linear solve inside a time-marching or Nyström scheme broke down."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class NumericOverflow(FLQRError, ArithmeticError):
    pass


class InvariantViolation(FLQRError, RuntimeError):
    pass


class ScenarioError(FLQRError):
    """Base for scenario-file problems; mapped to CLI exit status 2."""


class ParseError(ScenarioError, ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line


class ScenarioValidationError(ScenarioError, ValueError):
    pass

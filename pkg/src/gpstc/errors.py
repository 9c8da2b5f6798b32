"""Exception types shared across the package."""


class GpstcError(Exception):
    """Base class for package errors."""


class ValidationError(GpstcError, ValueError):
    """Configuration or argument failed validation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericalError(GpstcError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class IllConditionedError(NumericalError):
    """A linear system stayed singular after jitter/ridge escalation."""


class NotFittedError(GpstcError, RuntimeError):
    """A model was used before being fitted."""

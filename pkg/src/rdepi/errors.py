"""Exception types shared across the package."""

from __future__ import annotations


class Error(Exception):
    """Base class for all rdepi errors."""


class ValidationError(Error):
    """Invalid input. Carries one message per detected problem."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SchemaError(ValidationError):
    """A scenario/observed-data document failed schema validation."""


class UnsupportedOperation(Error):
    """Requested an operation outside the supported envelope (e.g. 2D IMEX)."""


class GuardViolation(Error):
    """A step-size guard was violated under strict mode."""


class NumericalAbort(Error):
    """Integration produced a non-finite state; names the step and compartment."""

    def __init__(self, step_index, time, compartment):
        self.step_index = step_index
        self.time = time
        self.compartment = compartment
        super().__init__(
            f"non-finite state at step {step_index} (t={time:g}), "
            f"compartment {compartment!r}"
        )


class UsageError(Error):
    """Bad command-line invocation."""

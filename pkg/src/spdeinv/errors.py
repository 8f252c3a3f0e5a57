"""Exception hierarchy.

Two roots matter to callers: :class:`ValidationError` for bad inputs (CLI exit
code 1) and :class:`NumericalError` for failures during a computation (CLI exit
code 2).
"""


class SpdeInvError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SpdeInvError, ValueError):
    pass


class NumericalError(SpdeInvError, RuntimeError):
    pass


class NonMonotonePartition(ValidationError):
    pass


class EmptyPartition(ValidationError):
    pass


class CholeskyFailure(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class SolverBreakdown(NumericalError):
    pass


class InsufficientBatches(NumericalError):
    pass


class DegenerateFit(NumericalError):
    pass


class InsufficientSignal(NumericalError):
    pass


class TailNotConverged(NumericalError):
    pass


class ConfigIssue(ValidationError):
    """One problem found in an experiment config, located by ``path``."""

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path or '<root>'}: {reason}")


class SchemaViolation(ConfigIssue):
    pass


class ValueOutOfRange(ConfigIssue):
    pass


class InvalidConfig(ValidationError):
    """Aggregate of every :class:`ConfigIssue` found in one config."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "\n".join(f"  - {e}" for e in self.errors)
        super().__init__(f"invalid config ({len(self.errors)} problem(s)):\n{lines}")

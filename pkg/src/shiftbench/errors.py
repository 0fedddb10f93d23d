"""Exception types shared across the toolkit.

Every error that a caller is expected to branch on gets its own class; message
text is for humans and carries the offending values, never just a code.
"""

from __future__ import annotations


class ShiftbenchError(Exception):
    """Base class for all toolkit errors."""


class ParamDomainError(ShiftbenchError):
    """Natural parameter outside the family's open domain (never clamped)."""


class SupportError(ShiftbenchError):
    """Observed value outside the family's support."""


class ShiftDomainError(ShiftbenchError):
    """A shifted natural parameter eta(z) + s(z; delta) left the domain.

    Carries the variable name and the offending coordinate so callers can
    report which mechanism broke.
    """

    def __init__(self, message: str, variable: str | None = None, coordinate: int | None = None):
        super().__init__(message)
        self.variable = variable
        self.coordinate = coordinate


class StratumCoverageError(ShiftbenchError):
    """A conditioning stratum required by an estimator has no samples."""

    def __init__(self, message: str, variable: str | None = None, stratum: tuple | None = None):
        super().__init__(message)
        self.variable = variable
        self.stratum = stratum


class InfeasibleTargetError(ShiftbenchError):
    """A requested marginal cannot be reached by any finite shift.

    Carries the attainable open range (lo, hi) of the marginal.
    """

    def __init__(self, message: str, attainable: tuple[float, float] | None = None):
        super().__init__(message)
        self.attainable = attainable


class EstimatorScopeError(ShiftbenchError):
    """An estimator was asked for a setting outside its validity scope."""


class ConstraintError(ShiftbenchError):
    """Constraint set is malformed, empty, or unbounded."""


class ConfigError(ShiftbenchError):
    """Malformed model, data, or run configuration.

    ``pointer`` is a JSON-pointer-style path to the offending field when the
    source was a structured document.
    """

    def __init__(self, message: str, pointer: str | None = None):
        super().__init__(message)
        self.pointer = pointer

"""Exception hierarchy shared by all solver layers."""

from __future__ import annotations


class SmaflowError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(SmaflowError):
    """Invalid parameters, meshes or configuration files.

    ``violations`` lists every named constraint that failed, so callers can
    report all problems at once instead of one per run.
    """

    def __init__(self, message: str, violations: list[str] | None = None):
        self.violations = list(violations) if violations else [message]
        super().__init__(message)


class SolverError(SmaflowError):
    """A linear or nonlinear solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class NonConvergenceError(SolverError):
    """An iteration cap was exhausted; a smaller time step usually helps."""


class PositivityError(SmaflowError):
    """The enthalpy lost strict positivity; the run is aborted, never clamped."""


class AuditError(SmaflowError):
    """A hard thermodynamic identity failed on recorded data."""

    def __init__(self, message: str, checks: list[str] | None = None):
        self.checks = list(checks) if checks else []
        super().__init__(message)

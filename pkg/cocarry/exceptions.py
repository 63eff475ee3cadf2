"""
Error types raised by the toolkit

Every error carries the same fields as the API's ``ErrorResponse`` model:
a stable ``error_code``, a human-readable message and optional details.
Pipeline stages wrap failures in ``StageError`` so callers know where a run
stopped.
"""

from typing import Any, Dict, Optional


class CoCarryError(Exception):
    """Base class for all toolkit errors"""

    error_code = "cocarry_error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}
        self.stage = stage

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_code": self.error_code,
            "error_message": self.message,
            "details": self.details or None,
            "stage": self.stage,
        }


class ConfigError(CoCarryError):
    """Scenario or settings file missing, unreadable or invalid"""
    error_code = "config_error"


class ParseError(CoCarryError):
    """Malformed row in an input CSV"""
    error_code = "parse_error"

    def __init__(self, message: str, line: Optional[int] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.line = line
        if line is not None:
            self.details.setdefault("line", line)


class UnitSanityError(CoCarryError):
    """Segment lengths are outside the plausible band, usually wrong units"""
    error_code = "unit_sanity_error"


class InfeasibleFrame(CoCarryError):
    """Observed segment lengths disagree with the calibrated geometry"""
    error_code = "infeasible_frame"


class NonConvergence(CoCarryError):
    """Iteration cap hit with the residual still above threshold"""
    error_code = "non_convergence"


class DegenerateJacobian(CoCarryError):
    """J J^T is numerically singular even after regularization"""
    error_code = "degenerate_jacobian"


class InfeasibleStart(CoCarryError):
    """Initial posture violates the joint box or wrist-distance constraint"""
    error_code = "infeasible_start"


class DegenerateAntiparallel(CoCarryError):
    """Initial and optimized wrist-pair vectors point in opposite directions"""
    error_code = "degenerate_antiparallel"


class DimensionMismatch(CoCarryError):
    """Model, gains and step data do not agree on sizes"""
    error_code = "dimension_mismatch"


class QpInfeasible(CoCarryError):
    """The QP constraint set is empty"""
    error_code = "qp_infeasible"


class QpMaxIterations(CoCarryError):
    """The QP solver used up its iteration budget"""
    error_code = "qp_max_iterations"


class StageError(CoCarryError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` holds the original error"""
    error_code = "stage_error"

    def __init__(self, stage: str, cause: Exception):
        details = cause.to_dict() if isinstance(cause, CoCarryError) else {"error_message": str(cause)}
        super().__init__(f"[{stage}] {cause}", details=details, stage=stage)
        self.cause = cause

from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from fastapi import Request
from fastapi.responses import JSONResponse

from app.core.logging import logger

# CLI exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID_SCENARIO = 2
EXIT_NON_CONVERGENCE = 3

class AdiabaticError(Exception):
    """Base exception for simulation and analysis errors"""
    def __init__(
        self,
        message: str,
        code: str = "ADIABATIC_ERROR",
        status_code: int = 400,
        exit_code: int = EXIT_FAILURE,
        details: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.code = code
        self.status_code = status_code
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(message)

    def with_context(self, **context: Any) -> "AdiabaticError":
        """Merge caller context into details and return self for re-raising"""
        self.details.update(context)
        return self

class DimensionMismatchError(AdiabaticError):
    """Operands of different Hilbert-space dimension"""
    def __init__(self, message: str = "Dimension mismatch", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, code="DIMENSION_MISMATCH", details=details)

class NonHermitianError(AdiabaticError):
    """Matrix expected to be Hermitian is not"""
    def __init__(self, message: str = "Operator is not Hermitian", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, code="NON_HERMITIAN", details=details)

class NormalizationError(AdiabaticError):
    """State or unitary fails its normalization invariant"""
    def __init__(self, message: str = "Normalization invariant violated", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, code="NORMALIZATION", details=details)

class SingularPathError(AdiabaticError):
    """Path evaluated at a point where its Hamiltonian diverges"""
    def __init__(self, message: str = "Singular path point", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, code="SINGULAR_PATH_POINT", details=details)

class ScheduleError(AdiabaticError):
    """Invalid gap schedule or protocol parameters"""
    def __init__(self, message: str = "Invalid schedule parameters", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, code="INVALID_SCHEDULE", details=details)

class ConvergenceError(AdiabaticError):
    """Step-halving did not reach the requested tolerance"""
    def __init__(
        self,
        message: str = "Numerical integration did not converge",
        iterates: Optional[List[Any]] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        super().__init__(
            message=message,
            code="NON_CONVERGENCE",
            status_code=500,
            exit_code=EXIT_NON_CONVERGENCE,
            details=details
        )
        self.iterates = iterates or []

class NoiseModelError(AdiabaticError):
    """Invalid noise model or noise trace"""
    def __init__(self, message: str = "Invalid noise model", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, code="INVALID_NOISE", details=details)

class TrajectoryError(AdiabaticError):
    """A Monte-Carlo trajectory failed to propagate"""
    def __init__(self, seed: int, cause: Exception):
        exit_code = getattr(cause, "exit_code", EXIT_FAILURE)
        super().__init__(
            message=f"Trajectory with seed {seed} failed: {cause}",
            code="TRAJECTORY_FAILED",
            status_code=500,
            exit_code=exit_code,
            details={"seed": seed, "cause": type(cause).__name__}
        )
        self.seed = seed
        self.cause = cause

class ScenarioError(AdiabaticError):
    """Unknown or invalid scenario"""
    def __init__(self, message: str = "Invalid scenario", details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            code="INVALID_SCENARIO",
            status_code=422,
            exit_code=EXIT_INVALID_SCENARIO,
            details=details
        )

class UnknownParameterError(ScenarioError):
    """Sweep over a parameter that is not sweepable"""
    def __init__(self, parameter: str, sweepable: List[str]):
        super().__init__(
            message=f"Unknown sweep parameter {parameter!r}; sweepable: {', '.join(sweepable)}",
            details={"parameter": parameter, "sweepable": sweepable}
        )
        self.code = "UNKNOWN_PARAMETER"

async def adiabatic_exception_handler(request: Request, exc: AdiabaticError) -> JSONResponse:
    """Handle simulation errors raised inside request handlers"""
    logger.error(
        "Simulation error occurred",
        extra={
            "error_code": exc.code,
            "error_message": exc.message,
            "error_details": exc.details,
            "path": request.url.path,
            "method": request.method
        }
    )

    return JSONResponse(
        status_code=exc.status_code,
        content={
            "error": {
                "code": exc.code,
                "message": exc.message,
                "details": exc.details
            },
            "meta": {
                "timestamp": datetime.now(timezone.utc).isoformat()
            }
        }
    )

from datetime import datetime, timezone
from typing import Any, Dict, Generic, List, Optional, TypeVar

from pydantic import BaseModel, Field

T = TypeVar('T')

class MetaData(BaseModel):
    """Metadata for API responses"""
    request_id: Optional[str] = Field(None, description="Request identifier, when the client sent one")
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc), description="Response timestamp")
    total_items: Optional[int] = Field(None, description="Total number of items")

class ErrorDetail(BaseModel):
    """Error detail model"""
    code: str = Field(..., description="Error code")
    message: str = Field(..., description="Error message")
    details: Dict[str, Any] = Field(default_factory=dict, description="Structured error context")

class ErrorResponse(BaseModel):
    """Error response model"""
    error: ErrorDetail = Field(..., description="Error details")
    meta: MetaData = Field(default_factory=MetaData, description="Response metadata")

class SuccessResponse(BaseModel, Generic[T]):
    """Success response model"""
    data: T = Field(..., description="Response data")
    meta: MetaData = Field(default_factory=MetaData, description="Response metadata")

class ScenarioInfo(BaseModel):
    """Builtin scenario listing entry"""
    name: str
    description: str
    protocol: str
    path: str
    stochastic: bool

class BoundSummary(BaseModel):
    lhs: float
    rhs: float
    holds: bool

class StateSummary(BaseModel):
    final_fidelity: float
    target_fidelity: float
    eigenstate_fidelity: float
    pass_fidelities: List[float]
    ensemble: Optional[Dict[str, Any]] = None

class RunSummary(BaseModel):
    """Scalar outcome of a run plus the decomposition report"""
    scenario: str
    final_fidelity: float
    epsilon_max: float
    deviation_norm: float
    ode_residual: float
    bound: BoundSummary
    total_time_s: float
    states: Dict[str, StateSummary]
    provenance: Dict[str, Any]
    decomposition: Dict[str, Any]

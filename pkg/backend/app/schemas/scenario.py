import math
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, validator

from app.core.config import settings
from app.schemas.noise import NoiseModel

# a state is a basis label or a list of (re, im) amplitude pairs
StateSpec = Union[Literal["x", "-x", "y", "-y", "z", "-z"], List[Tuple[float, float]]]

class StrictModel(BaseModel):
    class Config:
        extra = "forbid"

class PathSpec(StrictModel):
    """Adiabatic path; frequencies are entered as MHz (×2π)."""
    kind: Literal["xy", "latitude", "lz", "geodesic"] = "xy"
    theta_g: float = Field(math.pi, description="Path length θ_g in rad")
    theta: float = Field(math.pi / 2, description="Polar angle of a latitude path in rad")
    delta_mhz: float = Field(5.0, gt=0, description="Landau-Zener splitting Δ/2π in MHz")
    start: Optional[StateSpec] = None
    end: Optional[StateSpec] = None

    @validator("theta_g", "theta")
    def check_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("angles must be finite")
        return v

class GapSpec(StrictModel):
    """Energy gap Ω(λ) of an external-gap path."""
    kind: Literal["constant", "modulated", "crossing", "vanishing"] = "constant"
    omega0_mhz: float = Field(5.0, gt=0, description="Ω0/2π in MHz")
    a: float = Field(2.34, description="Crossing depth; gaps vanish for |a| > 1")

class ProtocolSpec(StrictModel):
    """
    How λ is driven. Continuous and idle protocols need one of T_us, phi or
    k; phi is the accumulated dynamic phase Ω0·T of one pass and k selects
    the k-th perfect-transfer resonance.
    """
    kind: Literal["continuous", "jumping", "hybrid", "idle"] = "continuous"
    N: int = Field(5, ge=1)
    r_jump: float = Field(1.0, ge=0, le=1)
    T_us: Optional[float] = Field(None, gt=0, description="Duration of one pass in µs")
    phi: Optional[float] = Field(None, gt=0)
    k: Optional[int] = Field(None, ge=1)
    repeats: int = Field(1, ge=1, description="Number of half paths traversed back and forth")
    compensate: bool = False
    lambda_clip: Optional[float] = Field(None, ge=0, lt=0.5)
    idle_lambda: float = Field(0.0, ge=0, le=1)

class Scenario(StrictModel):
    schema_version: int = settings.SCENARIO_SCHEMA_VERSION
    name: str = Field(..., min_length=1)
    description: str = ""
    path: PathSpec = Field(default_factory=PathSpec)
    gap: Optional[GapSpec] = None
    protocol: ProtocolSpec = Field(default_factory=ProtocolSpec)
    initial_states: List[StateSpec] = Field(default_factory=lambda: ["x"])
    noise: List[NoiseModel] = Field(default_factory=list)
    n_samples: int = Field(65, ge=2)
    n_traj: int = Field(200, ge=2)
    seed: int = Field(0, ge=0)
    target: Literal["adiabatic", "eigenstate"] = "adiabatic"

    @validator("schema_version")
    def check_version(cls, v: int) -> int:
        if v != settings.SCENARIO_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {settings.SCENARIO_SCHEMA_VERSION}")
        return v

    @validator("initial_states")
    def check_states(cls, v: List[StateSpec]) -> List[StateSpec]:
        if not v:
            raise ValueError("at least one initial state is required")
        return v

    @property
    def is_stochastic(self) -> bool:
        return any(m.kind != "bias_amplitude" for m in self.noise)

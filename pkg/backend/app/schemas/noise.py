import math
from typing import Annotated, Literal, Union

from pydantic import BaseModel, Field, validator

from app.core.config import settings

DETUNING = "detuning"
AMPLITUDE = "amplitude"

class NoiseSpec(BaseModel):
    """Base noise model schema"""

    class Config:
        extra = "forbid"
        frozen = True

    @property
    def channel(self) -> str:
        return AMPLITUDE

    @property
    def is_static(self) -> bool:
        return True

class StaticGaussianDetuning(NoiseSpec):
    """δ0 ~ N(0, σ²), fixed for a whole trajectory"""
    kind: Literal["static_gaussian_detuning"] = "static_gaussian_detuning"
    sigma_mhz: float = Field(0.13, ge=0, description="σ/2π in MHz")

    @property
    def channel(self) -> str:
        return DETUNING

    @property
    def sigma(self) -> float:
        return 2.0 * math.pi * self.sigma_mhz * 1e6

class StaticLorentzAmplitude(NoiseSpec):
    """δ1 from a Lorentzian of half width γ, truncated at |δ1| ≤ truncation"""
    kind: Literal["static_lorentz_amplitude"] = "static_lorentz_amplitude"
    gamma: float = Field(0.0067, ge=0, description="Relative half width")
    truncation: float = Field(default_factory=lambda: settings.LORENTZ_TRUNCATION, gt=0)

class WhiteGaussianAmplitude(NoiseSpec):
    """Uncorrelated δ1 redrawn every dwell"""
    kind: Literal["white_gaussian_amplitude"] = "white_gaussian_amplitude"
    rel_std: float = Field(0.5, ge=0)
    dwell_ns: float = Field(10.0, gt=0)

    @property
    def is_static(self) -> bool:
        return False

    @property
    def dwell(self) -> float:
        return self.dwell_ns * 1e-9

class OUAmplitude(NoiseSpec):
    """Ornstein-Uhlenbeck δ1 sampled per dwell, started from its stationary law"""
    kind: Literal["ou_amplitude"] = "ou_amplitude"
    rel_std: float = Field(0.5, ge=0)
    tau_c_ns: float = Field(100.0, gt=0)
    dwell_ns: float = Field(10.0, gt=0)

    @property
    def is_static(self) -> bool:
        return False

    @property
    def dwell(self) -> float:
        return self.dwell_ns * 1e-9

    @property
    def tau_c(self) -> float:
        return self.tau_c_ns * 1e-9

class BiasAmplitude(NoiseSpec):
    """Deterministic Ω → factor·Ω"""
    kind: Literal["bias_amplitude"] = "bias_amplitude"
    factor: float = 1.0

    @validator("factor")
    def check_factor(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("factor must be finite")
        return v

NoiseModel = Annotated[
    Union[
        StaticGaussianDetuning,
        StaticLorentzAmplitude,
        WhiteGaussianAmplitude,
        OUAmplitude,
        BiasAmplitude,
    ],
    Field(discriminator="kind"),
]

from typing import List
from pydantic_settings import BaseSettings
from pydantic import validator
from pathlib import Path

class Settings(BaseSettings):
    # Application settings
    APP_NAME: str = "AdiabatQuant"
    DEBUG: bool = False
    VERSION: str = "1.0.0"
    API_V1_STR: str = "/api/v1"

    # Server settings
    HOST: str = "0.0.0.0"
    PORT: int = 8000

    # CORS settings
    CORS_ORIGINS: List[str] = [
        "http://localhost:3000",
        "http://localhost:8000",
    ]

    # Logging settings
    LOG_DIR: Path = Path("logs")
    LOG_LEVEL: str = "INFO"
    LOG_TO_FILE: bool = False

    # Output settings
    OUTPUT_DIR: Path = Path("results")
    SCENARIO_SCHEMA_VERSION: int = 1

    # Propagation settings
    INTEGRATOR: str = "magnus4"
    PROPAGATION_TOLERANCE: float = 1e-9
    MAX_HALVINGS: int = 20
    SUBSTEPS_PER_CYCLE: int = 64
    LAMBDA_STEP: float = 0.01
    MAX_CHUNK_STEPS: int = 1 << 16

    # Analysis settings
    EPSILON_TOLERANCE: float = 1e-6
    EPSILON_POINTS_PER_CYCLE: int = 32
    ODE_TOLERANCE: float = 1e-8
    BERRY_GRID_POINTS: int = 2048
    FINITE_DIFFERENCE_STEP: float = 1e-6

    # Path settings
    LZ_LAMBDA_CLIP: float = 0.02
    MICROWAVE_FRAME_SAMPLES: int = 4097

    # Noise settings
    LORENTZ_TRUNCATION: float = 0.5
    MC_MAX_WORKERS: int = 4

    @validator("CORS_ORIGINS", pre=True)
    def assemble_cors_origins(cls, v: str | List[str]) -> List[str] | str:
        if isinstance(v, str) and not v.startswith("["):
            return [i.strip() for i in v.split(",")]
        elif isinstance(v, (list, str)):
            return v
        raise ValueError(v)

    @validator("INTEGRATOR")
    def check_integrator(cls, v: str) -> str:
        if v not in ("magnus4", "midpoint"):
            raise ValueError(f"INTEGRATOR must be 'magnus4' or 'midpoint', got {v!r}")
        return v

    class Config:
        case_sensitive = True
        env_file = ".env"

settings = Settings()

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from prometheus_client import make_asgi_app

from app.api.v1.api import api_router
from app.core.config import settings
from app.core.exceptions import AdiabaticError, adiabatic_exception_handler
from app.core.logging import logger
from app.core.middleware import RequestMonitoringMiddleware
from app.services.scenarios import BUILTINS

# Create FastAPI app
app = FastAPI(
    title=f"{settings.APP_NAME} API",
    description="Adiabatic evolution simulator: scenarios, propagation and the adiabatic/diabatic decomposition",
    version=settings.VERSION
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.CORS_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.add_middleware(
    RequestMonitoringMiddleware,
    exclude_paths={"/metrics", "/health", "/docs", "/redoc", "/openapi.json"},
)

app.add_exception_handler(AdiabaticError, adiabatic_exception_handler)

# Mount Prometheus metrics
metrics_app = make_asgi_app()
app.mount("/metrics", metrics_app)

app.include_router(api_router, prefix=settings.API_V1_STR)

@app.on_event("startup")
async def startup_event():
    logger.info("Application startup complete", extra={"scenarios": len(BUILTINS)})

@app.get("/health")
async def health():
    return {"status": "healthy", "version": settings.VERSION}

@app.get("/")
async def root():
    """Root endpoint"""
    return {
        "name": f"{settings.APP_NAME} API",
        "version": settings.VERSION,
        "status": "running"
    }

if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "app.main:app",
        host=settings.HOST,
        port=settings.PORT,
        reload=settings.DEBUG
    )

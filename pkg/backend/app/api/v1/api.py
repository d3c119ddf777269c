from fastapi import APIRouter
from app.api.v1.endpoints import scenarios

api_router = APIRouter()

api_router.include_router(scenarios.router, prefix="/scenarios", tags=["scenarios"])

import time
from typing import Callable, Optional, Set

from fastapi import Request, Response
from starlette.middleware.base import BaseHTTPMiddleware
from starlette.types import ASGIApp

from app.core.logging import logger
from app.core.monitoring import REQUEST_COUNT, REQUEST_LATENCY

class RequestMonitoringMiddleware(BaseHTTPMiddleware):
    """Request metrics, structured access logs and an X-Process-Time header"""

    def __init__(
        self,
        app: ASGIApp,
        exclude_paths: Optional[Set[str]] = None,
        enable_logging: bool = True,
    ):
        super().__init__(app)
        self.exclude_paths = exclude_paths or set()
        self.enable_logging = enable_logging

    async def dispatch(self, request: Request, call_next: Callable) -> Response:
        if request.url.path in self.exclude_paths:
            return await call_next(request)

        start_time = time.perf_counter()
        path = request.url.path
        method = request.method
        try:
            response = await call_next(request)
        except Exception as e:
            REQUEST_COUNT.labels(method=method, endpoint=path, status=500).inc()
            logger.error(
                "Request failed",
                extra={"method": method, "path": path, "error": str(e)},
                exc_info=True
            )
            raise

        duration = time.perf_counter() - start_time
        REQUEST_COUNT.labels(method=method, endpoint=path, status=response.status_code).inc()
        REQUEST_LATENCY.labels(method=method, endpoint=path).observe(duration)
        response.headers["X-Process-Time"] = f"{duration:.3f}"
        if self.enable_logging:
            logger.info(
                "Request completed",
                extra={
                    "method": method,
                    "path": path,
                    "status_code": response.status_code,
                    "duration_ms": duration * 1000,
                    "client_ip": request.client.host if request.client else "unknown",
                }
            )
        return response

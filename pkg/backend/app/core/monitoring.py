import time
from contextlib import contextmanager
from typing import Iterator

from prometheus_client import Counter, Histogram

from app.core.logging import logger

# Metrics
REQUEST_COUNT = Counter(
    "http_requests_total",
    "Total HTTP requests",
    ["method", "endpoint", "status"]
)

REQUEST_LATENCY = Histogram(
    "http_request_duration_seconds",
    "HTTP request latency",
    ["method", "endpoint"]
)

SCENARIO_RUNS = Counter(
    "scenario_runs_total",
    "Scenario runs and sweeps by outcome",
    ["scenario", "kind", "status"]
)

SCENARIO_DURATION = Histogram(
    "scenario_run_duration_seconds",
    "Wall time of scenario runs and sweeps",
    ["scenario", "kind"],
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0)
)

TRAJECTORIES = Counter(
    "monte_carlo_trajectories_total",
    "Noisy trajectories propagated",
    ["scenario"]
)

@contextmanager
def record_run(scenario: str, kind: str = "run") -> Iterator[None]:
    """Count and time one scenario run or sweep."""
    start_time = time.perf_counter()
    status = "success"
    try:
        yield
    except Exception as e:
        status = getattr(e, "code", type(e).__name__)
        raise
    finally:
        duration = time.perf_counter() - start_time
        SCENARIO_RUNS.labels(scenario=scenario, kind=kind, status=status).inc()
        SCENARIO_DURATION.labels(scenario=scenario, kind=kind).observe(duration)
        logger.info(
            "Scenario finished",
            extra={"scenario": scenario, "kind": kind, "status": status, "duration_s": duration}
        )

def record_trajectories(scenario: str, count: int) -> None:
    TRAJECTORIES.labels(scenario=scenario).inc(count)

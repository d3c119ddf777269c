from typing import List, Optional

from fastapi import APIRouter, Query

from app.api.models import ErrorResponse, MetaData, RunSummary, ScenarioInfo, SuccessResponse
from app.core.monitoring import record_run
from app.services.runner import run, to_jsonable
from app.services.scenarios import BUILTINS, get_scenario

router = APIRouter()

@router.get("", response_model=SuccessResponse[List[ScenarioInfo]])
def list_builtin_scenarios():
    """List builtin scenarios."""
    items = [
        ScenarioInfo(
            name=name,
            description=scenario.description,
            protocol=scenario.protocol.kind,
            path=scenario.path.kind,
            stochastic=scenario.is_stochastic,
        )
        for name, scenario in BUILTINS.items()
    ]
    return SuccessResponse[List[ScenarioInfo]](data=items, meta=MetaData(total_items=len(items)))

@router.get("/{name}", responses={422: {"model": ErrorResponse}})
def read_scenario(name: str):
    """Scenario definition as stored."""
    return {"data": get_scenario(name).dict(), "meta": MetaData().dict()}

@router.post("/{name}/run", response_model=SuccessResponse[RunSummary], responses={422: {"model": ErrorResponse}})
def run_scenario(
    name: str,
    seed: Optional[int] = Query(None, ge=0),
    points: int = Query(33, ge=2, le=1025, description="Phase table resolution"),
):
    """Run a builtin scenario and return its summary and decomposition report."""
    scenario = get_scenario(name)
    with record_run(scenario.name):
        result = run(scenario, seed)
    payload = result.summary()
    payload["decomposition"] = result.report.to_dict(points)
    return SuccessResponse[RunSummary](data=RunSummary.parse_obj(to_jsonable(payload)))

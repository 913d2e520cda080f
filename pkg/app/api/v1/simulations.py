"""Simulation API endpoints: preset catalogue, analytic references and short capped runs."""

import math
from typing import Any, Optional

import numpy as np
from fastapi import APIRouter, HTTPException, Query, status
from pydantic import BaseModel, Field

from app.core.config import settings
from app.core.exceptions import ProbeOutsideDomainError, SolverError
from app.core.prometheus import SIMULATION_RUNS
from app.services.analytic_service import analytic_solution
from app.services.report_service import ErrorEntry, error_report, force_coefficients
from app.services.scenario_service import PRESETS, ScenarioConfig, list_presets, prepare, preset_config, run_scenario
from app.services.solver_service import Stepper

router = APIRouter(prefix="/simulations", tags=["Simulations"])


class PresetSummary(BaseModel):
    """Catalogue entry for one named scenario."""

    name: str
    description: str


class ReferenceValue(BaseModel):
    """Analytic velocity and pressure at one point; pressure is null where undefined."""

    preset: str
    x: float
    y: float
    t: float
    u: float
    v: float
    p: Optional[float]


class RunRequest(BaseModel):
    """Short run of a preset with optional overrides merged over it."""

    preset: str
    overrides: dict[str, Any] = Field(default_factory=dict)
    max_steps: int = Field(default=10, ge=1, description="Capped at the server's api_max_steps")


class RunResponse(BaseModel):
    scenario: str
    steps: int
    t: float
    steady: bool
    drag_coefficient: Optional[float] = None
    lift_coefficient: Optional[float] = None
    errors: list[ErrorEntry] = []


def _config(name: str, overrides: Optional[dict[str, Any]] = None) -> ScenarioConfig:
    try:
        return preset_config(name, overrides)
    except ValueError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc)) from exc


@router.get(
    "/presets",
    response_model=list[PresetSummary],
    status_code=status.HTTP_200_OK,
    summary="List presets",
)
async def get_presets() -> list[PresetSummary]:
    return [PresetSummary(name=n, description=PRESETS[n].get("description", "")) for n in list_presets()]


@router.get(
    "/presets/{name}",
    response_model=ScenarioConfig,
    status_code=status.HTTP_200_OK,
    summary="Get preset configuration",
    description="Full validated configuration of a named preset.",
)
async def get_preset(name: str) -> ScenarioConfig:
    return _config(name)


@router.get(
    "/reference/{name}",
    response_model=ReferenceValue,
    status_code=status.HTTP_200_OK,
    summary="Evaluate analytic reference",
)
async def get_reference(
    name: str,
    x: float = Query(..., description="x coordinate"),
    y: float = Query(..., description="y coordinate"),
    t: float = Query(0.0, ge=0.0, description="time"),
) -> ReferenceValue:
    """Evaluate a preset's analytic solution at (x, y, t).

    Raises:
        HTTPException 400: Unknown preset or preset without an analytic reference
    """
    cfg = _config(name)
    if cfg.reference is None:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=f"preset {name!r} has no analytic reference")
    u, v, p = (float(np.asarray(c)) for c in analytic_solution(cfg.reference, x, y, t))
    return ReferenceValue(preset=name, x=x, y=y, t=t, u=u, v=v, p=None if math.isnan(p) else p)


@router.post(
    "/run",
    response_model=RunResponse,
    status_code=status.HTTP_200_OK,
    summary="Run a short simulation",
    description="Runs at most api_max_steps steps and returns the error report and force coefficients.",
)
def run_simulation(request: RunRequest) -> RunResponse:
    """Run a preset synchronously.

    Raises:
        HTTPException 400: Invalid preset or overrides, or a grid above api_max_cells
        HTTPException 422: Solver failure or a probe leaving the domain
    """
    cfg = _config(request.preset, request.overrides)
    cells = cfg.grid.cells
    if cells > settings.api_max_cells:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"grid of {cells} cells exceeds the limit of {settings.api_max_cells} for HTTP runs",
        )
    steps = min(request.max_steps, settings.api_max_steps)
    try:
        prepared = prepare(cfg)
        stepper = Stepper(prepared.problem)
        result = run_scenario(prepared, max_steps=steps, stepper=stepper)
        response = RunResponse(scenario=cfg.name, steps=result.steps, t=result.final.t, steady=result.steady)
        final = result.final
        if final.mesh is not None and final.force is not None:
            rep = cfg.report
            response.drag_coefficient, response.lift_coefficient = force_coefficients(
                final.force, final.mesh, cfg.fluid.rho, rep.characteristic_velocity, rep.diameter
            )
        if cfg.reference is not None:
            response.errors = error_report(final, prepared, stepper).entries
    except (SolverError, ProbeOutsideDomainError) as exc:
        SIMULATION_RUNS.labels(scenario=cfg.name, status="failed").inc()
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc)) from exc
    except ValueError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc)) from exc
    SIMULATION_RUNS.labels(scenario=cfg.name, status="ok").inc()
    return response

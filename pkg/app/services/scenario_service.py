"""Scenario configuration: presets, TOML loading and construction of runnable problems.

A scenario file is TOML. It may name a preset with `preset = "<name>"`; its tables are
deep-merged over that preset before validation.
"""

import copy
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from app.core.exceptions import ConfigError
from app.services.analytic_service import ReferenceSpec, analytic_solution, reference_field
from app.services.geometry_service import FluidSide
from app.services.grid_service import MIN_CELLS, BoundaryConditionSet, GridSpec, StaggeredState, apply_normal_bcs
from app.services.interface_mesh_service import InterfaceMesh, Shape, generate_mesh, merge_meshes
from app.services.penalty_service import KinematicsSpec, PenaltyParams
from app.services.solver_service import CouplingMode, FlowProblem, RunResult, Stepper, TimeStepperState

logger = logging.getLogger(__name__)


class GridConfig(BaseModel):
    origin: tuple[float, float] = (0.0, 0.0)
    extent: tuple[float, float]
    nx: int = Field(ge=MIN_CELLS)

    @model_validator(mode="after")
    def _check_cells(self) -> "GridConfig":
        if min(self.extent) <= 0.0:
            raise ValueError("grid extent must be positive")
        if self.ny < MIN_CELLS:
            raise ValueError(f"grid needs at least {MIN_CELLS} cells along y")
        return self

    @property
    def ny(self) -> int:
        return round(self.extent[1] * self.nx / self.extent[0])

    @property
    def cells(self) -> int:
        return self.nx * self.ny

    def build(self) -> GridSpec:
        return GridSpec.from_extent(self.origin, self.extent, self.nx)


class FluidConfig(BaseModel):
    rho: float = Field(default=1.0, gt=0.0)
    mu: float = Field(gt=0.0)


class InterfaceConfig(BaseModel):
    shapes: list[Shape] = Field(default_factory=list)
    m_fac: float = Field(default=2.0, gt=0.0)
    default_side: Literal["plus", "minus"] = "plus"


class TimeConfig(BaseModel):
    """Time step dt = dt_factor * h and the stopping rule."""
    dt_factor: float = Field(gt=0.0)
    end_time: Optional[float] = Field(default=None, gt=0.0)
    max_steps: Optional[int] = Field(default=None, ge=1)
    steady: bool = False
    log_interval: int = Field(default=50, ge=0)


class ReportConfig(BaseModel):
    """Error-report and diagnostics options."""
    band_cells: int = Field(default=2, ge=0)
    strip_fraction: float = Field(default=0.0, ge=0.0, lt=0.5)
    lagrangian_component: Optional[int] = None
    characteristic_velocity: float = Field(default=1.0, gt=0.0)
    diameter: float = Field(default=1.0, gt=0.0)
    transient_fraction: float = Field(default=0.5, ge=0.0, lt=1.0)


class OutputConfig(BaseModel):
    fields: bool = True
    vtk: bool = True
    checkpoint: bool = False
    debug: bool = False


class ScenarioConfig(BaseModel):
    """Complete description of one simulation."""

    name: str
    description: str = ""
    grid: GridConfig
    boundaries: BoundaryConditionSet
    fluid: FluidConfig
    interface: InterfaceConfig = Field(default_factory=InterfaceConfig)
    kinematics: list[KinematicsSpec] = Field(default_factory=list)
    penalty: PenaltyParams = Field(default_factory=lambda: PenaltyParams(kappa0=1e-3))
    time: TimeConfig
    coupling: CouplingMode = CouplingMode.IIM_FULL
    reference: Optional[ReferenceSpec] = None
    initial_condition: Literal["rest", "reference"] = "rest"
    report: ReportConfig = Field(default_factory=ReportConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ScenarioConfig":
        if self.reference is None and self.boundaries.uses_reference:
            raise ValueError("boundary segments use the analytic reference but none is configured")
        if self.reference is None and self.initial_condition == "reference":
            raise ValueError("initial_condition = 'reference' needs an analytic reference")
        if self.time.end_time is None and self.time.max_steps is None and not self.time.steady:
            raise ValueError("time needs end_time, max_steps or steady = true")
        return self

    @property
    def reynolds(self) -> float:
        return self.fluid.rho * self.report.characteristic_velocity * self.report.diameter / self.fluid.mu


# --- Presets ---


def channel_boundaries(center: tuple[float, float], height: float, angle: float, length: float) -> dict[str, Any]:
    """Walls everywhere except traction mouths where the channel meets x = 0 and x = length."""
    sides = {}
    half = 0.5 * height / math.cos(angle)
    for side, x in (("west", 0.0), ("east", length)):
        yc = center[1] + math.tan(angle) * (x - center[0])
        sides[side] = [
            {"kind": "traction", "start": yc - half, "end": yc + half, "use_reference": True},
            {"kind": "velocity"},
        ]
    sides["south"] = [{"kind": "velocity"}]
    sides["north"] = [{"kind": "velocity"}]
    return sides


def _poiseuille(angle: float) -> dict[str, Any]:
    length, center, height = 5.0, (2.5, 2.5), 1.0
    return {
        "name": "poiseuille_inclined" if angle else "poiseuille",
        "description": "Pressure-driven plane channel between two immersed walls",
        "grid": {"origin": (0.0, 0.0), "extent": (length, length), "nx": 32},
        "boundaries": channel_boundaries(center, height, angle, length),
        "fluid": {"rho": 1.0, "mu": 0.01},
        "interface": {
            "shapes": [
                {"kind": "channel", "center": center, "height": height, "angle": angle, "bounds": (0.0, 0.0, length, length)}
            ],
            "m_fac": 2.0,
        },
        "kinematics": [{"kind": "stationary"}],
        "penalty": {"kappa0": 1e-3, "eta": 0.0},
        "time": {"dt_factor": 0.1, "steady": True, "end_time": 60.0},
        "initial_condition": "reference",
        "reference": {"kind": "poiseuille", "p0": 0.2, "height": height, "length": length, "mu": 0.01, "angle": angle, "center": center},
        "report": {"strip_fraction": 0.1, "lagrangian_component": 0, "characteristic_velocity": 2.0 / 3.0, "diameter": height},
    }


def _cylinder(reynolds: float, alpha: float = 0.0) -> dict[str, Any]:
    name = f"cylinder_re{int(reynolds)}" if alpha == 0.0 else "spinning_cylinder"
    radius = 0.5
    kinematics = [{"kind": "stationary"}] if alpha == 0.0 else [{"kind": "rotation", "center": (0.0, 0.0), "omega": alpha / radius}]
    return {
        "name": name,
        "description": "Uniform flow past a circular cylinder of unit diameter",
        "grid": {"origin": (-15.0, -30.0), "extent": (60.0, 60.0), "nx": 960},
        "boundaries": {
            "west": [{"kind": "velocity", "velocity": (1.0, 0.0)}],
            "east": [{"kind": "traction", "traction": 0.0}],
            "south": [{"kind": "normal_velocity", "velocity": (1.0, 0.0)}],
            "north": [{"kind": "normal_velocity", "velocity": (1.0, 0.0)}],
        },
        "fluid": {"rho": 1.0, "mu": 1.0 / reynolds},
        "interface": {"shapes": [{"kind": "circle", "center": (0.0, 0.0), "radius": radius}], "m_fac": 2.0},
        "kinematics": kinematics,
        "penalty": {"kappa0": 5e-3, "eta": 0.0},
        "time": {"dt_factor": 0.05, "end_time": 150.0},
        "initial_condition": "rest",
        "report": {"characteristic_velocity": 1.0, "diameter": 2.0 * radius, "transient_fraction": 0.5},
        "output": {"fields": True, "vtk": True},
    }


PRESETS: dict[str, dict[str, Any]] = {
    "poiseuille": _poiseuille(0.0),
    "poiseuille_inclined": _poiseuille(math.pi / 12.0),
    "couette": {
        "name": "couette",
        "description": "Circular Couette flow with only the rotating inner cylinder immersed",
        "grid": {"origin": (-1.0, -1.0), "extent": (2.0, 2.0), "nx": 16},
        "boundaries": {side: [{"kind": "velocity", "use_reference": True}] for side in ("west", "east", "south", "north")},
        "fluid": {"rho": 1.0, "mu": 0.01},
        "interface": {"shapes": [{"kind": "circle", "center": (0.0, 0.0), "radius": 0.5}], "m_fac": 2.0},
        "kinematics": [{"kind": "rotation", "center": (0.0, 0.0), "omega": 2.0}],
        "penalty": {"kappa0": 7e-3, "eta": 0.0},
        "time": {"dt_factor": 0.05, "steady": True, "end_time": 60.0},
        "initial_condition": "reference",
        "reference": {"kind": "couette", "r1": 0.5, "r2": 2.0, "omega1": 2.0, "omega2": -2.0},
        "report": {"characteristic_velocity": 1.0, "diameter": 1.0},
    },
    "eccentric": {
        "name": "eccentric",
        "description": "Lubrication flow between a rotating inner and a fixed eccentric outer cylinder",
        "grid": {"origin": (-1.0, -1.0), "extent": (2.0, 2.0), "nx": 128},
        "boundaries": {side: [{"kind": "traction", "traction": 0.0}] for side in ("west", "east", "south", "north")},
        "fluid": {"rho": 1.0, "mu": 1.0},
        "interface": {
            "shapes": [
                {"kind": "circle", "center": (0.0, 0.0), "radius": 0.75, "orientation": "ccw"},
                {"kind": "circle", "center": (3.0 / 128.0, 0.0), "radius": 0.75 * (1.0 + 1.0 / 24.0), "orientation": "cw"},
            ],
            "m_fac": 2.0,
            "default_side": "minus",
        },
        "kinematics": [
            {"kind": "rotation", "center": (0.0, 0.0), "omega": 8.33e-4, "component": 0},
            {"kind": "stationary", "component": 1},
        ],
        "penalty": {"kappa0": 2.0e-4, "eta": 0.0},
        "time": {"dt_factor": 0.1, "steady": True, "end_time": 10.0},
        "reference": {"kind": "eccentric"},
        "report": {"characteristic_velocity": 8.33e-4 * 0.75, "diameter": 1.5},
    },
    "cylinder_re20": _cylinder(20.0),
    "cylinder_re40": _cylinder(40.0),
    "cylinder_re100": _cylinder(100.0),
    "spinning_cylinder": _cylinder(20.0, alpha=1.0),
}


def list_presets() -> list[str]:
    return sorted(PRESETS)


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Recursively merge override into a copy of base; non-dict values replace."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _validate(data: dict[str, Any], source: str) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid scenario {source}: {exc}") from exc


def preset_data(name: str) -> dict[str, Any]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return copy.deepcopy(PRESETS[name])


def preset_config(name: str, overrides: Optional[dict[str, Any]] = None) -> ScenarioConfig:
    """Validated preset, optionally with overrides merged in."""
    return _validate(deep_merge(preset_data(name), overrides or {}), f"preset {name}")


def load_scenario(path: Path, overrides: Optional[dict[str, Any]] = None) -> ScenarioConfig:
    """Parse a TOML scenario file.

    Raises:
        ConfigError: Unreadable file, TOML syntax error, unknown preset or invalid values
    """
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario file {path} is not valid TOML: {exc}") from exc
    preset = data.pop("preset", None)
    base = preset_data(preset) if preset else {}
    merged = deep_merge(deep_merge(base, data), overrides or {})
    merged.setdefault("name", path.stem)
    return _validate(merged, str(path))


def with_resolution(config: ScenarioConfig, nx: int) -> ScenarioConfig:
    """Same scenario on a grid with nx cells along x."""
    data = config.model_dump(mode="python")
    data["grid"]["nx"] = nx
    return _validate(data, f"{config.name} at nx={nx}")


# --- Construction ---


@dataclass
class PreparedScenario:
    config: ScenarioConfig
    grid: GridSpec
    problem: FlowProblem
    mesh: Optional[InterfaceMesh]


def build_mesh(config: ScenarioConfig, grid: GridSpec) -> Optional[InterfaceMesh]:
    if not config.interface.shapes:
        return None
    meshes = [generate_mesh(shape, m_fac=config.interface.m_fac, h=grid.h) for shape in config.interface.shapes]
    mesh = merge_meshes(meshes)
    logger.info("Interface: %d nodes, %d elements, %d component(s)", mesh.n_nodes, mesh.n_elements, mesh.n_components)
    return mesh


def prepare(config: ScenarioConfig) -> PreparedScenario:
    """Grid, flow problem and interface mesh for a validated scenario."""
    grid = config.grid.build()
    problem = FlowProblem(
        grid=grid,
        bcs=config.boundaries,
        rho=config.fluid.rho,
        mu=config.fluid.mu,
        dt=config.time.dt_factor * grid.h,
        kinematics=list(config.kinematics),
        penalty=config.penalty,
        mode=config.coupling,
        reference=reference_field(config.reference),
        default_side=FluidSide.PLUS if config.interface.default_side == "plus" else FluidSide.MINUS,
    )
    return PreparedScenario(config=config, grid=grid, problem=problem, mesh=build_mesh(config, grid))


def initial_state(prepared: PreparedScenario) -> StaggeredState:
    """Rest, or the analytic reference sampled at the staggered locations."""
    grid = prepared.grid
    state = StaggeredState.zeros(grid)
    ref = prepared.config.reference
    if prepared.config.initial_condition == "reference" and ref is not None:
        state.u = np.nan_to_num(analytic_solution(ref, *grid.u_points(), 0.0)[0])
        state.v = np.nan_to_num(analytic_solution(ref, *grid.v_points(), 0.0)[1])
        state.p = np.nan_to_num(analytic_solution(ref, *grid.p_points(), 0.0)[2])
    return apply_normal_bcs(state, prepared.problem.bcs, 0.0, grid, prepared.problem.reference)


def run_scenario(
    prepared: PreparedScenario,
    end_time: Optional[float] = None,
    max_steps: Optional[int] = None,
    stepper: Optional[Stepper] = None,
) -> RunResult:
    """Run a prepared scenario with its configured (or the given) stopping rule."""
    tc = prepared.config.time
    stepper = stepper or Stepper(prepared.problem)
    start = TimeStepperState.initial(prepared.grid, prepared.mesh, initial_state(prepared))
    logger.info(
        "Running %s: %dx%d cells, h=%.4g, dt=%.4g, mode=%s, Re=%.4g",
        prepared.config.name,
        prepared.grid.nx,
        prepared.grid.ny,
        prepared.grid.h,
        prepared.problem.dt,
        stepper.mode.value,
        prepared.config.reynolds,
    )
    return stepper.run(
        start,
        end_time=end_time if end_time is not None else tc.end_time,
        max_steps=max_steps if max_steps is not None else tc.max_steps,
        steady=tc.steady,
        log_interval=tc.log_interval,
    )

"""Grid-refinement studies and coupling-mode comparisons."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

from pydantic import BaseModel

from app.core.exceptions import ProbeOutsideDomainError, SolverError
from app.core.prometheus import SIMULATION_RUNS
from app.services.report_service import ErrorReport, error_report
from app.services.scenario_service import ScenarioConfig, prepare, run_scenario, with_resolution
from app.services.solver_service import CouplingMode, Stepper

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_FAILED = "failed"


class ConvergenceRow(BaseModel):
    nx: int
    h: float
    status: str = STATUS_OK
    steps: int = 0
    steady: bool = False
    errors: dict[str, float] = {}
    message: str = ""


class ObservedOrder(BaseModel):
    """log(e_coarse / e_fine) / log(h_coarse / h_fine) for one error key and one pair of levels."""
    key: str
    h_coarse: float
    h_fine: float
    order: Optional[float] = None
    flag: str = ""


class ConvergenceTable(BaseModel):
    scenario: str
    rows: list[ConvergenceRow] = []
    orders: list[ObservedOrder] = []

    def order(self, key: str, h_fine: float) -> Optional[float]:
        for o in self.orders:
            if o.key == key and math.isclose(o.h_fine, h_fine):
                return o.order
        return None


def observed_order(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> tuple[Optional[float], str]:
    """Observed order and a flag explaining why it is undefined, if it is."""
    if math.isclose(h_coarse, h_fine):
        return None, "identical resolution"
    if e_coarse <= 0.0 or e_fine <= 0.0:
        return None, "zero error"
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine), ""


def observed_orders(rows: Sequence[ConvergenceRow]) -> list[ObservedOrder]:
    """Pairwise orders between consecutive successful levels."""
    done = [r for r in rows if r.status == STATUS_OK]
    out = []
    for coarse, fine in zip(done, done[1:]):
        for key in sorted(set(coarse.errors) & set(fine.errors)):
            order, flag = observed_order(coarse.errors[key], fine.errors[key], coarse.h, fine.h)
            out.append(ObservedOrder(key=key, h_coarse=coarse.h, h_fine=fine.h, order=order, flag=flag))
    return out


def run_level(config: ScenarioConfig, nx: int, end_time: Optional[float] = None, max_steps: Optional[int] = None) -> ConvergenceRow:
    """Run one resolution; solver failures come back as a failed row."""
    level = with_resolution(config, nx)
    prepared = prepare(level)
    row = ConvergenceRow(nx=nx, h=prepared.grid.h)
    try:
        stepper = Stepper(prepared.problem)
        result = run_scenario(prepared, end_time=end_time, max_steps=max_steps, stepper=stepper)
        report = error_report(result.final, prepared, stepper)
    except (SolverError, ProbeOutsideDomainError) as exc:
        logger.error("Level nx=%d of %s failed: %s", nx, config.name, exc)
        SIMULATION_RUNS.labels(scenario=config.name, status=STATUS_FAILED).inc()
        row.status = STATUS_FAILED
        row.message = str(exc)
        return row
    SIMULATION_RUNS.labels(scenario=config.name, status=STATUS_OK).inc()
    row.steps = result.steps
    row.steady = result.steady
    row.errors = report.as_dict()
    return row


def run_convergence_study(
    config: ScenarioConfig,
    levels: Sequence[int],
    end_time: Optional[float] = None,
    max_steps: Optional[int] = None,
    workers: int = 1,
) -> ConvergenceTable:
    """Run config at every resolution in levels (cells along x) and tabulate errors and orders.

    dt = dt_factor * h and kappa = kappa0 / dt^2 follow each level's h.

    Raises:
        ValueError: Fewer than two levels
    """
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two resolutions")
    if config.reference is None:
        raise ValueError(f"scenario {config.name!r} has no analytic reference")
    levels = list(levels)
    logger.info("Convergence study of %s on nx = %s", config.name, levels)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_level, config, nx, end_time, max_steps) for nx in levels]
            rows = [f.result() for f in futures]
    else:
        rows = [run_level(config, nx, end_time, max_steps) for nx in levels]
    rows.sort(key=lambda r: -r.h)
    table = ConvergenceTable(scenario=config.name, rows=rows, orders=observed_orders(rows))
    for o in table.orders:
        if o.key == "velocity.L2.full" and o.order is not None:
            logger.info("velocity L2 order between h=%.4g and h=%.4g: %.2f", o.h_coarse, o.h_fine, o.order)
    return table


class CouplingComparison(BaseModel):
    scenario: str
    reports: dict[str, ErrorReport] = {}
    failures: dict[str, str] = {}


def compare_coupling(
    config: ScenarioConfig,
    modes: Sequence[CouplingMode] = tuple(CouplingMode),
    end_time: Optional[float] = None,
    max_steps: Optional[int] = None,
) -> CouplingComparison:
    """Run the same scenario in each coupling mode, sharing one assembled Stokes system."""
    if config.reference is None:
        raise ValueError(f"scenario {config.name!r} has no analytic reference")
    prepared = prepare(config)
    base = Stepper(prepared.problem)
    out = CouplingComparison(scenario=config.name)
    for mode in modes:
        mode = CouplingMode(mode)
        stepper = base.with_mode(mode)
        prepared.problem = stepper.problem
        try:
            result = run_scenario(prepared, end_time=end_time, max_steps=max_steps, stepper=stepper)
            out.reports[mode.value] = error_report(result.final, prepared, stepper)
        except (SolverError, ProbeOutsideDomainError) as exc:
            logger.error("Coupling mode %s failed: %s", mode.value, exc)
            out.failures[mode.value] = str(exc)
    return out

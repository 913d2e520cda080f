"""Command line entry point: python -m app.cli {run,converge,compare-coupling} <config.toml>."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from app.core.config import settings
from app.core.exceptions import ConfigError, InsufficientDataError, ProbeOutsideDomainError, SolverError
from app.core.logging import configure_logging
from app.core.prometheus import SIMULATION_RUNS
from app.services import output_service as out
from app.services.analytic_service import EccentricReference
from app.services.convergence_service import compare_coupling, run_convergence_study
from app.services.geometry_service import build_intersections
from app.services.report_service import (
    coefficient_history,
    error_report,
    force_coefficients,
    profile_errors,
    section_profiles,
    strouhal_number,
)
from app.services.scenario_service import PreparedScenario, load_scenario, prepare, run_scenario
from app.services.solver_service import CouplingMode, RunResult, Stepper

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_IO = 1
EXIT_SOLVER = 2
EXIT_CONFIG = 3


def _write_run_outputs(run_dir: Path, prepared: PreparedScenario, result: RunResult, stepper: Stepper) -> list[Path]:
    cfg = prepared.config
    st = result.final
    written = []
    if cfg.output.fields:
        written.append(out.write_field_dump(run_dir / "fields.field", st.state, prepared.grid, st.t))
    if cfg.output.vtk:
        written.append(out.write_vtk(run_dir / "fields.vtk", st.state, prepared.grid, cfg.name))
    if cfg.output.checkpoint:
        written.append(out.write_checkpoint(run_dir / "state.chk", st, prepared.grid))

    if st.mesh is not None:
        U = stepper.interface_velocity(st)
        p_plus, wss = stepper.interface_traction(st, U)
        written.append(out.write_lagrangian_csv(run_dir / "lagrangian.csv", st.mesh, U, p_plus, wss))
        rep = cfg.report
        coeffs = coefficient_history(result.force_history, cfg.fluid.rho, rep.characteristic_velocity, rep.diameter)
        written.append(out.write_force_csv(run_dir / "forces.csv", coeffs))
        if st.force is not None:
            c_d, c_l = force_coefficients(st.force, st.mesh, cfg.fluid.rho, rep.characteristic_velocity, rep.diameter)
            logger.info("Final C_D = %.4f, C_L = %.4f (Re = %.4g)", c_d, c_l, cfg.reynolds)
        if coeffs.shape[0] >= 3:
            try:
                st_number = strouhal_number(coeffs[:, 0], coeffs[:, 2], rep.diameter, rep.characteristic_velocity, rep.transient_fraction)
                logger.info("Strouhal number %.4f", st_number)
            except InsufficientDataError as exc:
                logger.info("No shedding frequency: %s", exc)
        if cfg.output.debug:
            written.append(out.write_crossings_csv(run_dir / "crossings.csv", build_intersections(st.mesh, prepared.grid)))
            if st.jumps is not None:
                written.append(out.write_jumps_csv(run_dir / "jumps.csv", st.mesh, st.jumps))

    if cfg.reference is not None:
        report = error_report(st, prepared, stepper)
        if isinstance(cfg.reference, EccentricReference):
            profiles = section_profiles(st.state, prepared)
            profile_errors(report, profiles)
            for name, prof in profiles.items():
                columns = ["x", "y", "v", "v_ref", "p", "p_ref"]
                written.append(
                    out.write_csv(run_dir / f"profile_{name}.csv", columns, np.column_stack([prof[c] for c in columns]).tolist())
                )
        written.append(out.write_error_csv(run_dir / "errors.csv", report))
    return written


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.config)
    prepared = prepare(cfg)
    stepper = Stepper(prepared.problem)
    try:
        result = run_scenario(prepared, end_time=args.end_time, max_steps=args.max_steps, stepper=stepper)
    except SolverError:
        SIMULATION_RUNS.labels(scenario=cfg.name, status="failed").inc()
        raise
    SIMULATION_RUNS.labels(scenario=cfg.name, status="ok").inc()
    logger.info("Finished %s: %d steps, t = %.5g, steady = %s", cfg.name, result.steps, result.final.t, result.steady)
    written = _write_run_outputs(args.output_root / cfg.name, prepared, result, stepper)
    for path in written:
        logger.info("Wrote %s", path)
    return EXIT_OK


def cmd_converge(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.config)
    table = run_convergence_study(cfg, args.levels, end_time=args.end_time, max_steps=args.max_steps, workers=args.workers)
    path = out.write_convergence_csv(args.output_root / cfg.name / "convergence.csv", table)
    logger.info("Wrote %s", path)
    failed = [r.nx for r in table.rows if r.status != "ok"]
    if failed:
        logger.error("Levels %s failed", failed)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_compare_coupling(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.config)
    comparison = compare_coupling(cfg, args.modes, end_time=args.end_time, max_steps=args.max_steps)
    run_dir = args.output_root / cfg.name / "coupling"
    for mode, report in comparison.reports.items():
        out.write_error_csv(run_dir / f"errors_{mode}.csv", report)
        logger.info("%-10s velocity Linf %.4e", mode, report.get("velocity", "Linf") or float("nan"))
    rows = [
        (mode, e.field, e.norm, e.region, e.value) for mode, report in comparison.reports.items() for e in report.entries
    ]
    out.write_csv(run_dir / "comparison.csv", ["mode"] + out.ERROR_HEADER, rows)
    if comparison.failures:
        logger.error("Modes failed: %s", ", ".join(sorted(comparison.failures)))
        return EXIT_SOLVER
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iim-flow", description="Immersed-interface Navier-Stokes scenarios")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", type=Path, help="TOML scenario file")
    common.add_argument("--output-root", type=Path, default=settings.output_root, help="Directory for run artifacts")
    common.add_argument("--end-time", type=float, default=None, help="Override the configured end time")
    common.add_argument("--max-steps", type=int, default=None, help="Override the configured step limit")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="Run a single simulation")
    run.set_defaults(func=cmd_run)

    converge = sub.add_parser("converge", parents=[common], help="Grid-refinement study")
    converge.add_argument("--levels", type=int, nargs="+", required=True, help="Cells along x for each level")
    converge.add_argument("--workers", type=int, default=1, help="Parallel processes")
    converge.set_defaults(func=cmd_converge)

    compare = sub.add_parser("compare-coupling", parents=[common], help="Run every coupling mode")
    compare.add_argument("--modes", nargs="+", default=[m.value for m in CouplingMode], choices=[m.value for m in CouplingMode])
    compare.set_defaults(func=cmd_compare_coupling)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except SolverError as exc:
        logger.error("Solver failure: %s", exc)
        return EXIT_SOLVER
    except ProbeOutsideDomainError as exc:
        logger.error("Probe failure: %s", exc)
        return EXIT_SOLVER
    except ValueError as exc:
        logger.error("Invalid request: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

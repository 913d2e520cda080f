"""Error reports and flow diagnostics for finished runs."""

import logging
import math
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel
from scipy.signal import detrend
from scipy.spatial import cKDTree

from app.core.exceptions import InsufficientDataError
from app.services.analytic_service import EccentricReference, PressureGauge, analytic_solution
from app.services.geometry_service import FluidSide, Intersections, SideMap, build_intersections, classify_sides
from app.services.grid_service import GridSpec, NormKind, StaggeredState, discrete_norm, fill_ghost_bcs
from app.services.iim_service import bilinear_interpolate, interp_velocity
from app.services.interface_mesh_service import InterfaceMesh, MassSolver, element_frames, integrate, project_l2, quadrature_points
from app.services.penalty_service import prescribed_motion
from app.services.scenario_service import PreparedScenario, ReportConfig
from app.services.solver_service import Stepper, TimeStepperState

logger = logging.getLogger(__name__)

# Offset (in units of h) used to evaluate one-sided reference limits at the interface
LIMIT_OFFSET = 1e-4

FULL = "full"
OMEGA_STAR = "omega_star"
INTERFACE = "interface"


class ErrorEntry(BaseModel):
    field: str
    norm: str
    region: str
    value: float


class ErrorReport(BaseModel):
    """Flat list of (field, norm, region, value) rows."""

    scenario: str
    h: float
    t: float
    entries: list[ErrorEntry] = []

    def add(self, field: str, norm: NormKind | str, region: str, value: float) -> None:
        norm = norm.value if isinstance(norm, NormKind) else norm
        self.entries.append(ErrorEntry(field=field, norm=norm, region=region, value=float(value)))

    def get(self, field: str, norm: NormKind | str, region: str = FULL) -> Optional[float]:
        norm = norm.value if isinstance(norm, NormKind) else norm
        for entry in self.entries:
            if (entry.field, entry.norm, entry.region) == (field, norm, region):
                return entry.value
        return None

    def as_dict(self) -> dict[str, float]:
        return {f"{e.field}.{e.norm}.{e.region}": e.value for e in self.entries}


# --- Masks ---


def _lattice_points(grid: GridSpec, lattice: str) -> tuple[np.ndarray, np.ndarray]:
    return {"u": grid.u_points, "v": grid.v_points, "p": grid.p_points}[lattice]()


def crossing_points(intersections: Intersections) -> np.ndarray:
    """Every interface/grid-line crossing point, shape (K, 2)."""
    pts = [c.point for c in intersections.lines.values() if c.size]
    return np.concatenate(pts, axis=0) if pts else np.zeros((0, 2))


def omega_star_mask(intersections: Intersections, grid: GridSpec, lattice: str, band_cells: int = 2) -> np.ndarray:
    """True for lattice points farther than band_cells cells (per axis) from every crossing."""
    x, y = _lattice_points(grid, lattice)
    crossings = crossing_points(intersections)
    if crossings.shape[0] == 0 or band_cells == 0:
        return np.ones(x.shape, dtype=bool)
    band = band_cells * grid.h
    tree = cKDTree(crossings)
    dist, _ = tree.query(np.column_stack([x.ravel(), y.ravel()]), k=1, p=np.inf, distance_upper_bound=2.0 * band)
    return (dist >= band).reshape(x.shape)


def strip_mask(grid: GridSpec, lattice: str, fraction: float) -> np.ndarray:
    """True away from the west and east boundaries by fraction of the domain length."""
    x, _ = _lattice_points(grid, lattice)
    if fraction <= 0.0:
        return np.ones(x.shape, dtype=bool)
    width = fraction * (grid.x1 - grid.x0)
    tol = 1e-12 * grid.h
    return (x >= grid.x0 + width - tol) & (x <= grid.x1 - width + tol)


# --- Eulerian errors ---


def _remove_side_means(error: np.ndarray, sides: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = error.copy()
    for side in (FluidSide.PLUS, FluidSide.MINUS):
        sel = mask & (sides == int(side))
        if np.any(sel):
            out[sel] -= out[sel].mean()
    return out


def eulerian_errors(
    report: ErrorReport,
    state: StaggeredState,
    grid: GridSpec,
    reference,
    t: float,
    intersections: Optional[Intersections],
    sides: Optional[SideMap],
    options: ReportConfig,
) -> None:
    """Add full-domain and Omega* norms of the u, v, p and velocity errors to report."""
    errors: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}
    for name, lattice, values in (("u", "u", state.u), ("v", "v", state.v), ("p", "p", state.p)):
        exact = analytic_solution(reference, *_lattice_points(grid, lattice), t)[("u", "v", "p").index(name)]
        region = strip_mask(grid, lattice, options.strip_fraction) & np.isfinite(exact)
        err = np.where(region, values - np.nan_to_num(exact), 0.0)
        if name == "p":
            if reference.gauge == PressureGauge.PER_SIDE and sides is not None:
                err = np.where(region, _remove_side_means(err, sides.p, region), 0.0)
            elif reference.gauge == PressureGauge.PER_SIDE:
                err = np.where(region, err - err[region].mean(), 0.0)
        errors[name] = err
        masks[name] = region

    stars = {}
    for name, lattice in (("u", "u"), ("v", "v"), ("p", "p")):
        if intersections is None:
            stars[name] = masks[name]
        else:
            stars[name] = masks[name] & omega_star_mask(intersections, grid, lattice, options.band_cells)

    for name in ("u", "v", "p"):
        report.add(name, NormKind.L2, FULL, discrete_norm(errors[name], grid, masks[name], NormKind.L2))
        report.add(name, NormKind.LINF, FULL, discrete_norm(errors[name], grid, masks[name], NormKind.LINF))
        if np.any(stars[name]):
            report.add(name, NormKind.L2, OMEGA_STAR, discrete_norm(errors[name], grid, stars[name], NormKind.L2))
            report.add(name, NormKind.LINF, OMEGA_STAR, discrete_norm(errors[name], grid, stars[name], NormKind.LINF))

    for region in (FULL, OMEGA_STAR):
        l2u = report.get("u", NormKind.L2, region)
        l2v = report.get("v", NormKind.L2, region)
        if l2u is None or l2v is None:
            continue
        report.add("velocity", NormKind.L2, region, math.hypot(l2u, l2v))
        report.add(
            "velocity",
            NormKind.LINF,
            region,
            max(report.get("u", NormKind.LINF, region), report.get("v", NormKind.LINF, region)),
        )


# --- Lagrangian errors ---


def reference_traction(mesh: InterfaceMesh, reference, grid: GridSpec, mu: float, t: float, solver=None):
    """Nodal positive-side pressure and wall shear stress of the analytic solution."""
    points, _ = quadrature_points(mesh)
    normals = np.broadcast_to(element_frames(mesh).normal[:, None, :], points.shape)
    delta = LIMIT_OFFSET * grid.h
    flat = points.reshape(-1, 2)
    n = normals.reshape(-1, 2)

    def velocity(offset: float) -> np.ndarray:
        x = flat + offset * n
        u, v, _ = analytic_solution(reference, x[:, 0], x[:, 1], t)
        return np.stack([u, v], axis=1)

    _, _, p = analytic_solution(reference, *(flat + delta * n).T, t)
    dudn = (-3.0 * velocity(delta) + 4.0 * velocity(2.0 * delta) - velocity(3.0 * delta)) / (2.0 * delta)
    wss = mu * (dudn - np.sum(dudn * n, axis=1, keepdims=True) * n)
    shape = points.shape[:2]
    solver = solver or MassSolver(mesh)
    p_nodal = project_l2(mesh, lambda _: np.nan_to_num(p).reshape(shape), solver)
    wss_nodal = project_l2(mesh, lambda _: wss.reshape(shape + (2,)), solver)
    return p_nodal, wss_nodal


def _nodal_norms(error: np.ndarray, mesh: InterfaceMesh, select: np.ndarray, mass) -> tuple[float, float]:
    e = np.where(select[:, None] if error.ndim == 2 else select, error, 0.0)
    if e.ndim == 1:
        l2 = float(np.sqrt(max(e @ (mass @ e), 0.0)))
        linf = float(np.max(np.abs(e[select]))) if np.any(select) else 0.0
    else:
        l2 = float(np.sqrt(max(sum(e[:, k] @ (mass @ e[:, k]) for k in range(e.shape[1])), 0.0)))
        linf = float(np.max(np.hypot(e[select, 0], e[select, 1]))) if np.any(select) else 0.0
    return l2, linf


def lagrangian_errors(
    report: ErrorReport,
    st: TimeStepperState,
    prepared: PreparedScenario,
    stepper: Stepper,
) -> None:
    """Add displacement, velocity, pressure and WSS norms on the interface to report."""
    mesh = st.mesh
    pb = prepared.problem
    options = prepared.config.report
    select = np.ones(mesh.n_nodes, dtype=bool)
    if options.lagrangian_component is not None:
        select = mesh.node_component == options.lagrangian_component
    solver = MassSolver(mesh)
    mass = solver.matrix

    xi, W = prescribed_motion(mesh, pb.kinematics, st.t)
    U = stepper.interface_velocity(st)
    for name, err in (("displacement", mesh.current - xi), ("interface_velocity", U - W)):
        l2, linf = _nodal_norms(err, mesh, select, mass)
        report.add(name, NormKind.L2, INTERFACE, l2)
        report.add(name, NormKind.LINF, INTERFACE, linf)

    reference = prepared.config.reference
    if reference is None:
        return
    p_plus, wss = stepper.interface_traction(st, U)
    p_ref, wss_ref = reference_traction(mesh, reference, pb.grid, pb.mu, st.t, solver)
    p_err = p_plus - p_ref
    if reference.gauge == PressureGauge.PER_SIDE and np.any(select):
        p_err = p_err - p_err[select].mean()
    for name, err in (("interface_pressure", p_err), ("wss", wss - wss_ref)):
        l2, linf = _nodal_norms(err, mesh, select, mass)
        report.add(name, NormKind.L2, INTERFACE, l2)
        report.add(name, NormKind.LINF, INTERFACE, linf)


def error_report(st: TimeStepperState, prepared: PreparedScenario, stepper: Optional[Stepper] = None) -> ErrorReport:
    """Eulerian and Lagrangian errors of a state against the scenario's analytic reference.

    Raises:
        ValueError: Scenario has no analytic reference
    """
    reference = prepared.config.reference
    if reference is None:
        raise ValueError(f"scenario {prepared.config.name!r} has no analytic reference")
    grid = prepared.grid
    report = ErrorReport(scenario=prepared.config.name, h=grid.h, t=st.t)
    intersections = sides = None
    if st.mesh is not None:
        intersections = build_intersections(st.mesh, grid)
        sides = classify_sides(intersections, grid, prepared.problem.default_side)
    eulerian_errors(report, st.state, grid, reference, st.t, intersections, sides, prepared.config.report)
    if st.mesh is not None:
        lagrangian_errors(report, st, prepared, stepper or Stepper(prepared.problem))
    logger.info(
        "%s: velocity L2 %.4e, pressure Linf(Omega*) %s",
        prepared.config.name,
        report.get("velocity", NormKind.L2) or 0.0,
        f"{report.get('p', NormKind.LINF, OMEGA_STAR):.4e}" if report.get("p", NormKind.LINF, OMEGA_STAR) is not None else "n/a",
    )
    return report


# --- Force diagnostics ---


def force_coefficients(F: np.ndarray, mesh: InterfaceMesh, rho: float, U: float, D: float) -> tuple[float, float]:
    """(C_D, C_L) = -integral of F over the reference mesh / (rho U^2 D / 2)."""
    if rho <= 0.0 or U == 0.0 or D <= 0.0:
        raise ValueError("rho and D must be positive and U nonzero")
    total = integrate(mesh, F)
    q = 0.5 * rho * U**2 * D
    return float(-total[0] / q), float(-total[1] / q)


def coefficient_history(history: Sequence[tuple[float, float, float]], rho: float, U: float, D: float) -> np.ndarray:
    """Rows (t, C_D, C_L) from rows (t, integral of F_x, integral of F_y)."""
    q = 0.5 * rho * U**2 * D
    data = np.asarray(history, dtype=float).reshape(-1, 3)
    return np.column_stack([data[:, 0], -data[:, 1] / q, -data[:, 2] / q])


def upward_crossings(times: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """Linearly interpolated times where signal goes from negative to non-negative."""
    idx = np.flatnonzero((signal[:-1] < 0.0) & (signal[1:] >= 0.0))
    s0, s1 = signal[idx], signal[idx + 1]
    return times[idx] + (times[idx + 1] - times[idx]) * (-s0 / (s1 - s0))


def strouhal_number(times, lift, D: float, U: float, transient_fraction: float = 0.0) -> float:
    """St = f D / U from the mean spacing of upward zero crossings of the detrended lift.

    Raises:
        InsufficientDataError: Fewer than 3 upward crossings in the analysis window
    """
    times = np.asarray(times, dtype=float)
    lift = np.asarray(lift, dtype=float)
    if times.shape != lift.shape:
        raise ValueError("times and lift must have the same shape")
    keep = times >= times[0] + transient_fraction * (times[-1] - times[0]) if times.size else np.zeros(0, dtype=bool)
    t, cl = times[keep], lift[keep]
    if t.size < 3:
        raise InsufficientDataError(f"only {t.size} samples after the transient cutoff")
    crossings = upward_crossings(t, detrend(cl))
    if crossings.size < 3:
        raise InsufficientDataError(f"only {crossings.size} upward zero crossings of the lift coefficient")
    frequency = 1.0 / float(np.mean(np.diff(crossings)))
    return frequency * D / U


# --- Eccentric-cylinder sections ---


def section_profiles(
    state: StaggeredState, prepared: PreparedScenario, n_samples: int = 400, margin_cells: float = 1.5
) -> dict[str, dict[str, np.ndarray]]:
    """Computed and reference v and p along y = 0 (section A) and x = 0 (section B) inside the gap.

    Raises:
        ValueError: Scenario reference is not the eccentric-cylinder one
    """
    ref = prepared.config.reference
    if not isinstance(ref, EccentricReference):
        raise ValueError("section profiles need the eccentric reference")
    grid = prepared.grid
    ghosted = fill_ghost_bcs(state, prepared.problem.bcs, 0.0, grid, prepared.problem.reference)
    margin = margin_cells * grid.h
    lines = {
        "section_a": np.column_stack([np.linspace(grid.x0, grid.x1, n_samples), np.zeros(n_samples)]),
        "section_b": np.column_stack([np.zeros(n_samples), np.linspace(grid.y0, grid.y1, n_samples)]),
    }
    out = {}
    for name, pts in lines.items():
        inner = np.hypot(pts[:, 0], pts[:, 1]) - ref.r1
        outer = ref.r2 - np.hypot(pts[:, 0] - ref.e, pts[:, 1])
        pts = pts[(inner > margin) & (outer > margin)]
        if pts.shape[0] == 0:
            continue
        vel = interp_velocity(ghosted, grid, pts)
        p = bilinear_interpolate(ghosted.pg, grid, "p", grid.p_shape, pts)
        _, v_ref, p_ref = analytic_solution(ref, pts[:, 0], pts[:, 1], 0.0)
        out[name] = {"x": pts[:, 0], "y": pts[:, 1], "v": vel[:, 1], "v_ref": v_ref, "p": p, "p_ref": p_ref}
    return out


def profile_errors(report: ErrorReport, profiles: dict[str, dict[str, np.ndarray]]) -> None:
    """Max deviation relative to the reference peak on each section; pressure offset removed."""
    for name, prof in profiles.items():
        for field in ("v", "p"):
            err = prof[field] - prof[f"{field}_ref"]
            if field == "p":
                err = err - err.mean()
            peak = float(np.max(np.abs(prof[f"{field}_ref"])))
            if peak > 0.0:
                report.add(field, "rel_peak", name, float(np.max(np.abs(err))) / peak)

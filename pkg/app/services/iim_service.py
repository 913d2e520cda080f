"""Jump-corrected operators, correction forcing and one-sided interface probes.

Every crossing of a stencil arm contributes a Taylor correction. With s = sign(n . d)
for the arm direction d and a crossing at c between lattice points x_a < c < x_b:

    gradient, face between a and b:  -s [p] / h
    Laplacian, point a:              -s (x_b - c) [mu du_k/dx_axis] / h^2
    Laplacian, point b:              -s (c - x_a) [mu du_k/dx_axis] / h^2

The momentum equation sees the sum as the body force f = -C_G + C_L, so the implicit
operator itself never changes. Divergence and advection stencils are not corrected.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from app.core.exceptions import ProbeOutsideDomainError
from app.services.geometry_service import (
    FAMILY_LINES,
    Axis,
    FluidSide,
    Intersections,
    IntersectionRecord,
    SideMap,
    StencilFamily,
    _LINES,
)
from app.services.grid_service import GHOST_DEPTH, GhostedState, GridSpec
from app.services.interface_mesh_service import (
    InterfaceMesh,
    MassSolver,
    element_frames,
    evaluate_on_elements,
    project_l2,
    quadrature_rule,
)
from app.services.jump_service import JumpField, eval_jump_at

logger = logging.getLogger(__name__)

# Configuration
PRESSURE_PROBE_FACTOR = 1.2
SHEAR_PROBE_FACTOR = 1.05
# tolerance in units of h for probes on the domain boundary
PROBE_DOMAIN_RTOL = 1e-9

# Laplacian family -> (velocity component, derivative axis)
_LAPLACIAN_FAMILIES = {
    StencilFamily.LAPLACIAN_U_X: (0, Axis.X),
    StencilFamily.LAPLACIAN_U_Y: (0, Axis.Y),
    StencilFamily.LAPLACIAN_V_X: (1, Axis.X),
    StencilFamily.LAPLACIAN_V_Y: (1, Axis.Y),
}
_GRADIENT_FAMILIES = {StencilFamily.GRADIENT_X: 0, StencilFamily.GRADIENT_Y: 1}

# lattice offsets (in units of h) of the u, v and p points
_LATTICE = {"u": (0.0, 0.5), "v": (0.5, 0.0), "p": (0.5, 0.5)}


@dataclass
class CorrectionLedger:
    """Every correction term applied to the momentum equation, traced to its crossing.

    Values are force densities (the contribution to f, i.e. -C_G or +C_L).
    """

    component: list[np.ndarray] = field(default_factory=list)
    i: list[np.ndarray] = field(default_factory=list)
    j: list[np.ndarray] = field(default_factory=list)
    value: list[np.ndarray] = field(default_factory=list)
    family: list[np.ndarray] = field(default_factory=list)
    crossing: list[np.ndarray] = field(default_factory=list)

    def add(self, component: int, i, j, value, family: StencilFamily, crossing) -> None:
        n = np.size(value)
        self.component.append(np.full(n, component, dtype=np.int8))
        self.i.append(np.asarray(i, dtype=np.int64))
        self.j.append(np.asarray(j, dtype=np.int64))
        self.value.append(np.asarray(value, dtype=float))
        self.family.append(np.full(n, list(StencilFamily).index(family), dtype=np.int8))
        self.crossing.append(np.asarray(crossing, dtype=np.int64))

    def arrays(self) -> dict[str, np.ndarray]:
        if not self.value:
            return {k: np.zeros(0) for k in ("component", "i", "j", "value", "family", "crossing")}
        return {
            "component": np.concatenate(self.component),
            "i": np.concatenate(self.i),
            "j": np.concatenate(self.j),
            "value": np.concatenate(self.value),
            "family": np.concatenate(self.family),
            "crossing": np.concatenate(self.crossing),
        }

    def __len__(self) -> int:
        return int(sum(v.size for v in self.value))


def _arm_direction_sign(record: IntersectionRecord) -> float:
    k = 0 if record.axis == Axis.X else 1
    return 1.0 if record.normal[k] > 0.0 else -1.0


def _array_index(axis: Axis, along: np.ndarray, line: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map (index along the line, line index) to [i, j] array indices."""
    return (along, line) if axis == Axis.X else (line, along)


def _lattice_coord(family: StencilFamily, index: np.ndarray, grid: GridSpec) -> np.ndarray:
    kind, offset = FAMILY_LINES[family]
    axis = _LINES[kind][0]
    origin = grid.x0 if axis == Axis.X else grid.y0
    return origin + (np.asarray(index) + offset) * grid.h


def gradient_correction(record: IntersectionRecord, jumps: JumpField, mesh: InterfaceMesh, grid: GridSpec) -> float:
    """Correction C_G of the gradient on the face between the record's two cell centres."""
    pj, _, _ = eval_jump_at(jumps, mesh, record.element, record.s)
    return float(-_arm_direction_sign(record) * pj / grid.h)


def laplacian_correction(
    records: Sequence[IntersectionRecord],
    along: int,
    jumps: JumpField,
    mesh: InterfaceMesh,
    grid: GridSpec,
) -> float:
    """Correction C_L (with mu absorbed) at lattice point `along` from the crossings of its arms.

    Args:
        records: Crossings on the point's line, from one Laplacian family
        along: Index of the point along that line
        jumps: Nodal jumps
        mesh: Interface mesh the records refer to
        grid: Eulerian grid
    """
    total = 0.0
    for rec in records:
        if rec.family not in _LAPLACIAN_FAMILIES:
            raise ValueError(f"{rec.family.value} is not a Laplacian stencil family")
        comp, deriv = _LAPLACIAN_FAMILIES[rec.family]
        _, jux, juy = eval_jump_at(jumps, mesh, rec.element, rec.s)
        jump = float((jux if deriv == Axis.X else juy)[comp])
        k = 0 if rec.axis == Axis.X else 1
        c = rec.point[k]
        sign = _arm_direction_sign(rec)
        if along == rec.lower:
            far = float(_lattice_coord(rec.family, rec.upper, grid))
            total += -sign * (far - c) * jump / grid.h**2
        elif along == rec.upper:
            far = float(_lattice_coord(rec.family, rec.lower, grid))
            total += -sign * (c - far) * jump / grid.h**2
    return total


def gradient_corrections(
    intersections: Intersections,
    jumps: JumpField,
    mesh: InterfaceMesh,
    grid: GridSpec,
    ledger: Optional[CorrectionLedger] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Face fields of C_G; G p + C_G is the jump-corrected gradient."""
    out = (np.zeros(grid.u_shape), np.zeros(grid.v_shape))
    for family, comp in _GRADIENT_FAMILIES.items():
        fam = intersections.families[family]
        sel = np.flatnonzero(fam.valid)
        if sel.size == 0:
            continue
        c = fam.crossings
        pj, _, _ = eval_jump_at(jumps, mesh, c.element[sel], c.s[sel])
        value = -c.sign[sel] * pj / grid.h
        axis = _LINES[c.kind][0]
        i, j = _array_index(axis, fam.lower[sel] + 1, c.line[sel])
        np.add.at(out[comp], (i, j), value)
        if ledger is not None:
            ledger.add(comp, i, j, -value, family, sel)
    return out


def laplacian_corrections(
    intersections: Intersections,
    jumps: JumpField,
    mesh: InterfaceMesh,
    grid: GridSpec,
    ledger: Optional[CorrectionLedger] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Face fields of C_L with mu absorbed; mu L u + C_L is the corrected viscous term."""
    out = (np.zeros(grid.u_shape), np.zeros(grid.v_shape))
    h2 = grid.h**2
    for family, (comp, deriv) in _LAPLACIAN_FAMILIES.items():
        fam = intersections.families[family]
        sel = np.flatnonzero(fam.valid)
        if sel.size == 0:
            continue
        c = fam.crossings
        _, jux, juy = eval_jump_at(jumps, mesh, c.element[sel], c.s[sel])
        jump = (jux if deriv == Axis.X else juy)[:, comp]
        axis = _LINES[c.kind][0]
        k = 0 if axis == Axis.X else 1
        cross = c.point[sel, k]
        lower = fam.lower[sel]
        x_lower = _lattice_coord(family, lower, grid)
        x_upper = x_lower + grid.h
        sign = c.sign[sel]
        for along, value in (
            (lower, -sign * (x_upper - cross) * jump / h2),
            (lower + 1, -sign * (cross - x_lower) * jump / h2),
        ):
            i, j = _array_index(axis, along, c.line[sel])
            np.add.at(out[comp], (i, j), value)
            if ledger is not None:
                ledger.add(comp, i, j, value, family, sel)
    return out


def assemble_correction_force(
    intersections: Intersections,
    jumps: JumpField,
    mesh: InterfaceMesh,
    grid: GridSpec,
    free: Optional[tuple[np.ndarray, np.ndarray]] = None,
    viscous: bool = True,
) -> tuple[np.ndarray, np.ndarray, CorrectionLedger]:
    """Body force f = -C_G + C_L on the velocity faces.

    Args:
        intersections: Crossings at the interface position the jumps refer to
        jumps: Nodal jumps (mu absorbed)
        mesh: Interface mesh
        grid: Eulerian grid
        free: Masks of unknown faces; contributions elsewhere are dropped
        viscous: Include the Laplacian corrections

    Returns:
        (fx, fy, ledger)
    """
    ledger = CorrectionLedger()
    cg_x, cg_y = gradient_corrections(intersections, jumps, mesh, grid, ledger)
    fx, fy = -cg_x, -cg_y
    if viscous:
        cl_x, cl_y = laplacian_corrections(intersections, jumps, mesh, grid, ledger)
        fx, fy = fx + cl_x, fy + cl_y
    if free is not None:
        fx = np.where(free[0], fx, 0.0)
        fy = np.where(free[1], fy, 0.0)
        entries = ledger.arrays()
        if entries["value"].size:
            keep = np.where(
                entries["component"] == 0,
                free[0][entries["i"].clip(0, grid.nx), entries["j"].clip(0, grid.ny - 1)],
                free[1][entries["i"].clip(0, grid.nx - 1), entries["j"].clip(0, grid.ny)],
            )
            filtered = CorrectionLedger()
            for fam_idx, family in enumerate(StencilFamily):
                sel = keep & (entries["family"] == fam_idx)
                for comp in (0, 1):
                    part = sel & (entries["component"] == comp)
                    if np.any(part):
                        filtered.add(comp, entries["i"][part], entries["j"][part], entries["value"][part], family, entries["crossing"][part])
            ledger = filtered
    return fx, fy, ledger


# --- Interpolation and probes ---


def _bilinear_stencil(points: np.ndarray, grid: GridSpec, lattice: str, shape: tuple[int, int]):
    """Padded indices of the lower-left node and bilinear fractions for each point.

    Points on the domain boundary are accepted; their stencils read ghost values.

    Raises:
        ProbeOutsideDomainError: A point lies outside the physical domain
    """
    tol = PROBE_DOMAIN_RTOL * grid.h
    outside = (
        (points[:, 0] < grid.x0 - tol)
        | (points[:, 0] > grid.x1 + tol)
        | (points[:, 1] < grid.y0 - tol)
        | (points[:, 1] > grid.y1 + tol)
    )
    if np.any(outside):
        k = int(np.argmax(outside))
        raise ProbeOutsideDomainError(f"probe at ({points[k, 0]:.6g}, {points[k, 1]:.6g}) is outside the domain")
    ox, oy = _LATTICE[lattice]
    fx = (points[:, 0] - grid.x0) / grid.h - ox
    fy = (points[:, 1] - grid.y0) / grid.h - oy
    i0 = np.floor(fx).astype(np.int64)
    j0 = np.floor(fy).astype(np.int64)
    return i0, j0, fx - i0, fy - j0


def bilinear_interpolate(padded: np.ndarray, grid: GridSpec, lattice: str, shape: tuple[int, int], points: np.ndarray) -> np.ndarray:
    """Standard bilinear interpolation of a ghosted lattice field."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    i0, j0, zeta, lam = _bilinear_stencil(points, grid, lattice, shape)
    g = GHOST_DEPTH
    a, b = i0 + g, j0 + g
    values = (
        (1 - zeta) * (1 - lam) * padded[a, b]
        + zeta * (1 - lam) * padded[a + 1, b]
        + (1 - zeta) * lam * padded[a, b + 1]
        + zeta * lam * padded[a + 1, b + 1]
    )
    if not np.all(np.isfinite(values)):
        raise ProbeOutsideDomainError("interpolation read unfilled ghost values")
    return values


def interp_velocity(ghosted: GhostedState, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    """Uncorrected bilinear velocity at points, shape (K, 2)."""
    u = bilinear_interpolate(ghosted.ug, grid, "u", grid.u_shape, points)
    v = bilinear_interpolate(ghosted.vg, grid, "v", grid.v_shape, points)
    return np.stack([u, v], axis=1)


def corrected_interp_velocity(
    ghosted: GhostedState,
    grid: GridSpec,
    sides: SideMap,
    points: np.ndarray,
    normals: np.ndarray,
    jux: np.ndarray,
    juy: np.ndarray,
    mu: float,
) -> np.ndarray:
    """Jump-corrected bilinear velocity at interface points.

    Each stencil node on the positive side is replaced by its negative-side extension
    u_k - |r_k . n| (n . [grad u]), with [grad u] = ([mu du/dx], [mu du/dy]) / mu.

    Args:
        ghosted: Velocity with ghosts filled
        grid: Eulerian grid
        sides: Side of every lattice point
        points: Interface points, shape (K, 2)
        normals: Unit normals at the points, shape (K, 2)
        jux, juy: [mu du/dx] and [mu du/dy] at the points, shape (K, 2)
        mu: Dynamic viscosity

    Returns:
        Velocity at the points, shape (K, 2)
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    jux = np.atleast_2d(jux)
    juy = np.atleast_2d(juy)
    out = np.zeros_like(points)
    g = GHOST_DEPTH
    for comp, (lattice, padded, side_arr, shape) in enumerate(
        (("u", ghosted.ug, sides.u, grid.u_shape), ("v", ghosted.vg, sides.v, grid.v_shape))
    ):
        i0, j0, zeta, lam = _bilinear_stencil(points, grid, lattice, shape)
        ox, oy = _LATTICE[lattice]
        normal_jump = (normals[:, 0] * jux[:, comp] + normals[:, 1] * juy[:, comp]) / mu
        total = np.zeros(points.shape[0])
        for di, dj, weight in ((0, 0, (1 - zeta) * (1 - lam)), (1, 0, zeta * (1 - lam)), (0, 1, (1 - zeta) * lam), (1, 1, zeta * lam)):
            ii, jj = i0 + di, j0 + dj
            value = padded[ii + g, jj + g]
            node = np.stack([grid.x0 + (ii + ox) * grid.h, grid.y0 + (jj + oy) * grid.h], axis=1)
            dist = np.abs(np.sum((node - points) * normals, axis=1))
            plus = side_arr[ii.clip(0, shape[0] - 1), jj.clip(0, shape[1] - 1)] == int(FluidSide.PLUS)
            total += weight * (value - np.where(plus, dist * normal_jump, 0.0))
        out[:, comp] = total
    if not np.all(np.isfinite(out)):
        raise ProbeOutsideDomainError("corrected interpolation read unfilled ghost values")
    return out


def _quadrature_geometry(mesh: InterfaceMesh):
    s_q, _ = quadrature_rule()
    frames = element_frames(mesh)
    points = np.stack([evaluate_on_elements(mesh, mesh.current, s) for s in s_q], axis=1)
    normals = np.broadcast_to(frames.normal[:, None, :], points.shape)
    elements = np.broadcast_to(np.arange(mesh.n_elements)[:, None], points.shape[:2])
    local = np.broadcast_to(s_q[None, :], points.shape[:2])
    return points, normals, elements, local


def restrict_velocity(
    ghosted: GhostedState,
    mesh: InterfaceMesh,
    grid: GridSpec,
    sides: Optional[SideMap],
    jumps: Optional[JumpField],
    mu: float,
    solver: Optional[MassSolver] = None,
) -> np.ndarray:
    """Nodal interface velocity: L2 projection of the interpolated velocity.

    With sides and jumps the interpolation is jump-corrected; otherwise it is the
    standard bilinear one.
    """
    points, normals, elements, local = _quadrature_geometry(mesh)
    flat = points.reshape(-1, 2)
    if sides is None or jumps is None or jumps.is_zero():
        values = interp_velocity(ghosted, grid, flat)
    else:
        _, jux, juy = eval_jump_at(jumps, mesh, elements.ravel(), local.ravel())
        values = corrected_interp_velocity(ghosted, grid, sides, flat, normals.reshape(-1, 2), jux, juy, mu)
    values = values.reshape(points.shape)
    return project_l2(mesh, lambda s_q: values, solver)


def clamp_to_domain(points: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Points moved onto the closed domain rectangle."""
    out = np.array(points, dtype=float)
    out[:, 0] = out[:, 0].clip(grid.x0, grid.x1)
    out[:, 1] = out[:, 1].clip(grid.y0, grid.y1)
    moved = int(np.count_nonzero(np.any(out != points, axis=1)))
    if moved:
        logger.debug("Clamped %d probe points onto the domain boundary", moved)
    return out


def exterior_pressure(
    ghosted: GhostedState,
    mesh: InterfaceMesh,
    grid: GridSpec,
    jumps: JumpField,
    element,
    s,
    clamp: bool = False,
) -> np.ndarray:
    """Positive-side pressure [p](x) + I[p](x - 1.2 sqrt(2) h n) at interface points.

    With clamp, probes that leave the domain are moved onto its boundary instead of failing.

    Raises:
        ProbeOutsideDomainError: Probe outside the domain and clamp is off
    """
    element = np.atleast_1d(np.asarray(element, dtype=np.int64))
    s = np.broadcast_to(np.asarray(s, dtype=float), element.shape)
    frames = element_frames(mesh)
    nodes = mesh.elements[element]
    x = (1.0 - s)[:, None] * mesh.current[nodes[:, 0]] + s[:, None] * mesh.current[nodes[:, 1]]
    probe = x - PRESSURE_PROBE_FACTOR * math.sqrt(2.0) * grid.h * frames.normal[element]
    if clamp:
        probe = clamp_to_domain(probe, grid)
    pj, _, _ = eval_jump_at(jumps, mesh, element, s)
    return pj + bilinear_interpolate(ghosted.pg, grid, "p", grid.p_shape, probe)


def wall_shear_stress(
    ghosted: GhostedState,
    mesh: InterfaceMesh,
    grid: GridSpec,
    element,
    s,
    U: np.ndarray,
    mu: float,
    clamp: bool = False,
) -> np.ndarray:
    """mu (I - nn)(I[u](x + hh n) - u(x)) / hh with hh = 1.05 sqrt(2) h, shape (K, 2).

    u(x) is the restricted nodal interface velocity U evaluated at the point. A clamped
    probe keeps the nominal hh.

    Raises:
        ProbeOutsideDomainError: Probe outside the domain and clamp is off
    """
    element = np.atleast_1d(np.asarray(element, dtype=np.int64))
    s = np.broadcast_to(np.asarray(s, dtype=float), element.shape)
    frames = element_frames(mesh)
    n = frames.normal[element]
    nodes = mesh.elements[element]
    x = (1.0 - s)[:, None] * mesh.current[nodes[:, 0]] + s[:, None] * mesh.current[nodes[:, 1]]
    u_x = (1.0 - s)[:, None] * U[nodes[:, 0]] + s[:, None] * U[nodes[:, 1]]
    hh = SHEAR_PROBE_FACTOR * math.sqrt(2.0) * grid.h
    probe = x + hh * n
    if clamp:
        probe = clamp_to_domain(probe, grid)
    u_probe = interp_velocity(ghosted, grid, probe)
    dudn = (u_probe - u_x) / hh
    tangential = dudn - np.sum(dudn * n, axis=1, keepdims=True) * n
    return mu * tangential


def lagrangian_traction(
    ghosted: GhostedState,
    mesh: InterfaceMesh,
    grid: GridSpec,
    jumps: JumpField,
    U: np.ndarray,
    mu: float,
    solver: Optional[MassSolver] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Nodal exterior pressure and WSS, each L2-projected from quadrature-point probes.

    Interfaces that end on the domain boundary put some probes of their end elements
    outside it; those probes are clamped onto the boundary.
    """
    s_q, _ = quadrature_rule()
    elements = np.repeat(np.arange(mesh.n_elements), s_q.size)
    local = np.tile(s_q, mesh.n_elements)
    shape = (mesh.n_elements, s_q.size)
    p_plus = exterior_pressure(ghosted, mesh, grid, jumps, elements, local, clamp=True).reshape(shape)
    wss = wall_shear_stress(ghosted, mesh, grid, elements, local, U, mu, clamp=True).reshape(shape + (2,))
    solver = solver or MassSolver(mesh)
    return project_l2(mesh, lambda _: p_plus, solver), project_l2(mesh, lambda _: wss, solver)

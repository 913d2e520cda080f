"""Uniform staggered (MAC) grid, field storage, standard operators and boundary ghosts.

Storage convention:
- u has shape (nx+1, ny); u[i, j] lives on the x-face at (x0 + i*h, y0 + (j+1/2)*h),
  so the face (i+1/2, j) of the cell-centred numbering is u[i+1, j]
- v has shape (nx, ny+1); v[i, j] lives at (x0 + (i+1/2)*h, y0 + j*h)
- p has shape (nx, ny); p[i, j] lives at the cell centre (x0 + (i+1/2)*h, y0 + (j+1/2)*h)

Ghosted arrays carry GHOST_DEPTH extra layers on every side. Unfilled ghosts are NaN
so that an operator reading them fails loudly instead of producing garbage.

Boundary sides hold ordered segments along their tangential coordinate. Each segment
realizes one of three conditions through second-order ghost formulas:
- velocity: normal faces prescribed, tangential ghosts reflected through the wall value
- traction: normal faces free, ghost pressure reflected through p_b = -t_n and the
  normal-velocity ghost chosen so that du_n/dn = -du_t/dt
- normal_velocity: normal faces prescribed, tangential ghost chosen so that
  du_t/dn = -du_n/dt (zero tangential traction)
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sps
from pydantic import BaseModel, Field, model_validator

from app.core.exceptions import ConfigError, ContractViolationError

logger = logging.getLogger(__name__)

# Configuration
GHOST_DEPTH = 2
EXTENT_RTOL = 1e-12
MIN_CELLS = 4

# reference(x, y, t) -> (u, v, p), broadcasting over array inputs
ReferenceField = Callable[[np.ndarray, np.ndarray, float], tuple[np.ndarray, np.ndarray, np.ndarray]]


class GridSpec(BaseModel):
    """Isotropic uniform grid over a rectangle."""

    model_config = {"frozen": True}

    origin: tuple[float, float] = (0.0, 0.0)
    extent: tuple[float, float]
    nx: int = Field(ge=MIN_CELLS)
    ny: int = Field(ge=MIN_CELLS)
    h: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _check_extent(self) -> "GridSpec":
        for length, n, name in ((self.extent[0], self.nx, "x"), (self.extent[1], self.ny, "y")):
            if abs(length - n * self.h) > EXTENT_RTOL * max(abs(length), 1.0):
                raise ValueError(f"extent.{name}={length} is not {n} * h={self.h}")
        return self

    @classmethod
    def from_extent(cls, origin: tuple[float, float], extent: tuple[float, float], nx: int) -> "GridSpec":
        """Build a grid with nx cells along x and the matching isotropic ny."""
        h = extent[0] / nx
        ny = int(round(extent[1] / h))
        return cls(origin=origin, extent=(nx * h, ny * h), nx=nx, ny=ny, h=h)

    @property
    def x0(self) -> float:
        return self.origin[0]

    @property
    def y0(self) -> float:
        return self.origin[1]

    @property
    def x1(self) -> float:
        return self.origin[0] + self.nx * self.h

    @property
    def y1(self) -> float:
        return self.origin[1] + self.ny * self.h

    def u_points(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.x0 + self.h * np.arange(self.nx + 1)
        y = self.y0 + self.h * (np.arange(self.ny) + 0.5)
        return np.meshgrid(x, y, indexing="ij")

    def v_points(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.x0 + self.h * (np.arange(self.nx) + 0.5)
        y = self.y0 + self.h * np.arange(self.ny + 1)
        return np.meshgrid(x, y, indexing="ij")

    def p_points(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.x0 + self.h * (np.arange(self.nx) + 0.5)
        y = self.y0 + self.h * (np.arange(self.ny) + 0.5)
        return np.meshgrid(x, y, indexing="ij")

    @property
    def u_shape(self) -> tuple[int, int]:
        return (self.nx + 1, self.ny)

    @property
    def v_shape(self) -> tuple[int, int]:
        return (self.nx, self.ny + 1)

    @property
    def p_shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)


@dataclass
class StaggeredState:
    """Face velocities and cell-centred pressure on a MAC grid."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, grid: GridSpec) -> "StaggeredState":
        return cls(u=np.zeros(grid.u_shape), v=np.zeros(grid.v_shape), p=np.zeros(grid.p_shape))

    def copy(self) -> "StaggeredState":
        return StaggeredState(u=self.u.copy(), v=self.v.copy(), p=self.p.copy())

    def check(self, grid: GridSpec) -> None:
        """Raise ContractViolationError unless shapes match grid and entries are finite."""
        for name, arr, shape in (("u", self.u, grid.u_shape), ("v", self.v, grid.v_shape), ("p", self.p, grid.p_shape)):
            if arr.shape != shape:
                raise ContractViolationError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ContractViolationError(f"{name} contains non-finite entries")


@dataclass
class GhostedState:
    """Padded copies of a state; interior of ug is ug[G:-G, G:-G]."""

    ug: np.ndarray
    vg: np.ndarray
    pg: np.ndarray

    def interior(self) -> StaggeredState:
        g = GHOST_DEPTH
        return StaggeredState(u=self.ug[g:-g, g:-g].copy(), v=self.vg[g:-g, g:-g].copy(), p=self.pg[g:-g, g:-g].copy())


class Boundary(str, Enum):
    """Sides of the rectangular domain."""
    WEST = "west"
    EAST = "east"
    SOUTH = "south"
    NORTH = "north"


class BoundaryKind(str, Enum):
    """Physical boundary condition realized on a boundary segment."""
    VELOCITY = "velocity"
    TRACTION = "traction"
    NORMAL_VELOCITY = "normal_velocity"


_KIND_CODES = {BoundaryKind.VELOCITY: 0, BoundaryKind.TRACTION: 1, BoundaryKind.NORMAL_VELOCITY: 2}


class BoundarySegment(BaseModel):
    """One condition on a stretch [start, end] of a side's tangential coordinate.

    velocity is the physical (u, v) pair; the traction kind reads only its tangential
    part and the normal_velocity kind only its normal part. With use_reference the
    values come from the scenario's analytic reference instead.
    """

    kind: BoundaryKind
    start: Optional[float] = None
    end: Optional[float] = None
    velocity: tuple[float, float] = (0.0, 0.0)
    traction: float = 0.0
    use_reference: bool = False

    @model_validator(mode="after")
    def _check_values(self) -> "BoundarySegment":
        if not all(math.isfinite(x) for x in (*self.velocity, self.traction)):
            raise ValueError("boundary values must be finite")
        if self.start is not None and self.end is not None and self.end <= self.start:
            raise ValueError("segment end must exceed start")
        return self


class BoundaryConditionSet(BaseModel):
    """Segments per domain side, searched in order."""

    west: list[BoundarySegment]
    east: list[BoundarySegment]
    south: list[BoundarySegment]
    north: list[BoundarySegment]

    @model_validator(mode="after")
    def _check_sides(self) -> "BoundaryConditionSet":
        for side in Boundary:
            if not self.segments(side):
                raise ValueError(f"side {side.value} has no boundary condition")
        return self

    @classmethod
    def uniform(cls, segment: BoundarySegment) -> "BoundaryConditionSet":
        return cls(west=[segment], east=[segment], south=[segment], north=[segment])

    def segments(self, side: Boundary) -> list[BoundarySegment]:
        return getattr(self, side.value)

    @property
    def has_traction(self) -> bool:
        return any(seg.kind == BoundaryKind.TRACTION for side in Boundary for seg in self.segments(side))

    @property
    def uses_reference(self) -> bool:
        return any(seg.use_reference for side in Boundary for seg in self.segments(side))


@dataclass
class _SideSample:
    kind: np.ndarray
    normal: np.ndarray
    tangential: np.ndarray
    pressure: np.ndarray


def _side_geometry(side: Boundary, grid: GridSpec) -> tuple[float, float, int, float]:
    """Return (sigma, tangential origin, tangential cell count, boundary coordinate)."""
    if side == Boundary.WEST:
        return 1.0, grid.y0, grid.ny, grid.x0
    if side == Boundary.EAST:
        return -1.0, grid.y0, grid.ny, grid.x1
    if side == Boundary.SOUTH:
        return 1.0, grid.x0, grid.nx, grid.y0
    return -1.0, grid.x0, grid.nx, grid.y1


def _sample_side(
    bcs: BoundaryConditionSet,
    side: Boundary,
    tau: np.ndarray,
    t: float,
    grid: GridSpec,
    reference: Optional[ReferenceField],
    homogeneous: bool,
) -> _SideSample:
    """Boundary data at tangential positions tau (physical normal/tangential components)."""
    _, t0, n_t, xb = _side_geometry(side, grid)
    tau = np.asarray(tau, dtype=float)
    lookup = np.clip(tau, t0, t0 + n_t * grid.h)
    kind = np.full(tau.shape, -1, dtype=np.int8)
    normal = np.zeros(tau.shape)
    tangential = np.zeros(tau.shape)
    pressure = np.zeros(tau.shape)
    normal_axis = 0 if side in (Boundary.WEST, Boundary.EAST) else 1

    for seg in bcs.segments(side):
        lo = -math.inf if seg.start is None else seg.start
        hi = math.inf if seg.end is None else seg.end
        sel = (kind < 0) & (lookup >= lo) & (lookup <= hi)
        if not np.any(sel):
            continue
        kind[sel] = _KIND_CODES[seg.kind]
        if homogeneous:
            continue
        if seg.use_reference:
            if reference is None:
                raise ConfigError(f"side {side.value} uses the analytic reference but none is configured")
            xs, ys = (np.full(tau[sel].shape, xb), tau[sel]) if normal_axis == 0 else (tau[sel], np.full(tau[sel].shape, xb))
            ur, vr, pr = reference(xs, ys, t)
            ur, vr, pr = (np.broadcast_to(np.asarray(a, dtype=float), xs.shape) for a in (ur, vr, pr))
            normal[sel] = ur if normal_axis == 0 else vr
            tangential[sel] = vr if normal_axis == 0 else ur
            pressure[sel] = pr
        else:
            normal[sel] = seg.velocity[normal_axis]
            tangential[sel] = seg.velocity[1 - normal_axis]
            pressure[sel] = -seg.traction

    if np.any(kind < 0):
        missing = float(lookup[np.argmax(kind < 0)])
        raise ConfigError(f"side {side.value} has no segment covering tangential coordinate {missing:.6g}")
    return _SideSample(kind=kind, normal=normal, tangential=tangential, pressure=pressure)


def _local_views(side: Boundary, ug: np.ndarray, vg: np.ndarray, pg: np.ndarray):
    """Writable views with axis 0 pointing inward and index GHOST_DEPTH at the boundary."""
    if side in (Boundary.WEST, Boundary.EAST):
        normal, tangential, pressure = ug, vg, pg
    else:
        normal, tangential, pressure = vg.T, ug.T, pg.T
    if side in (Boundary.EAST, Boundary.NORTH):
        normal, tangential, pressure = normal[::-1], tangential[::-1], pressure[::-1]
    return normal, tangential, pressure


def face_free_masks(grid: GridSpec, bcs: BoundaryConditionSet) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of velocity faces that are unknowns (interior plus traction boundary faces)."""
    mask_u = np.ones(grid.u_shape, dtype=bool)
    mask_v = np.ones(grid.v_shape, dtype=bool)
    for side in Boundary:
        _, t0, n_t, _ = _side_geometry(side, grid)
        tau = t0 + grid.h * (np.arange(n_t) + 0.5)
        kind = _sample_side(bcs, side, tau, 0.0, grid, None, homogeneous=True).kind
        free = kind == _KIND_CODES[BoundaryKind.TRACTION]
        if side == Boundary.WEST:
            mask_u[0, :] = free
        elif side == Boundary.EAST:
            mask_u[-1, :] = free
        elif side == Boundary.SOUTH:
            mask_v[:, 0] = free
        else:
            mask_v[:, -1] = free
    return mask_u, mask_v


def apply_normal_bcs(
    state: StaggeredState,
    bcs: BoundaryConditionSet,
    t: float,
    grid: GridSpec,
    reference: Optional[ReferenceField] = None,
    homogeneous: bool = False,
) -> StaggeredState:
    """Write prescribed boundary-normal velocities into a copy of state.

    Without any traction segment the prescribed values are shifted by a uniform
    outward velocity so that the net boundary flux vanishes.
    """
    out = state.copy()
    prescribed = []
    for side in Boundary:
        _, t0, n_t, _ = _side_geometry(side, grid)
        tau = t0 + grid.h * (np.arange(n_t) + 0.5)
        sample = _sample_side(bcs, side, tau, t, grid, reference, homogeneous)
        fixed = sample.kind != _KIND_CODES[BoundaryKind.TRACTION]
        target = {
            Boundary.WEST: out.u[0, :],
            Boundary.EAST: out.u[-1, :],
            Boundary.SOUTH: out.v[:, 0],
            Boundary.NORTH: out.v[:, -1],
        }[side]
        target[fixed] = sample.normal[fixed]
        prescribed.append(target)

    if not bcs.has_traction and not homogeneous:
        west, east, south, north = prescribed
        inflow = grid.h * (west.sum() - east.sum() + south.sum() - north.sum())
        perimeter = 2.0 * (grid.nx + grid.ny) * grid.h
        delta = inflow / perimeter
        if abs(delta) > 0.0:
            logger.debug("Balancing boundary flux: inflow=%.3e, offset=%.3e", inflow, delta)
        west -= delta
        east += delta
        south -= delta
        north += delta
    return out


def _fill_side(
    side: Boundary,
    ghosted: GhostedState,
    bcs: BoundaryConditionSet,
    t: float,
    grid: GridSpec,
    reference: Optional[ReferenceField],
    homogeneous: bool,
    all_rows: bool,
) -> None:
    g = GHOST_DEPTH
    h = grid.h
    sigma, t0, n_t, _ = _side_geometry(side, grid)
    nrm, tan, prs = _local_views(side, ghosted.ug, ghosted.vg, ghosted.pg)

    if all_rows:
        jn = np.arange(nrm.shape[1])
        jt = np.arange(tan.shape[1])
    else:
        jn = g + np.arange(n_t)
        jt = g + np.arange(n_t + 1)
    tau_n = t0 + (jn - g + 0.5) * h
    tau_t = t0 + (jt - g) * h

    def sample(tau):
        return _sample_side(bcs, side, tau, t, grid, reference, homogeneous)

    traction = _KIND_CODES[BoundaryKind.TRACTION]
    slip = _KIND_CODES[BoundaryKind.NORMAL_VELOCITY]

    # Normal component and pressure (cell rows)
    at_n = sample(tau_n)
    free = at_n.kind == traction
    dq = sample(tau_n + 0.5 * h).tangential - sample(tau_n - 0.5 * h).tangential
    nrm[g - 1, jn] = np.where(free, nrm[g + 1, jn] + 2.0 * sigma * dq, 2.0 * nrm[g, jn] - nrm[g + 1, jn])
    nrm[g - 2, jn] = np.where(free, nrm[g + 2, jn] + 4.0 * sigma * dq, 2.0 * nrm[g, jn] - nrm[g + 2, jn])
    prs[g - 1, jn] = np.where(free, 2.0 * at_n.pressure - prs[g, jn], prs[g, jn])
    prs[g - 2, jn] = np.where(free, 2.0 * at_n.pressure - prs[g + 1, jn], prs[g + 1, jn])

    # Tangential component (face rows)
    at_t = sample(tau_t)
    neumann = at_t.kind == slip
    dn = sample(tau_t + 0.5 * h).normal - sample(tau_t - 0.5 * h).normal
    tan[g - 1, jt] = np.where(neumann, tan[g, jt] + sigma * dn, 2.0 * at_t.tangential - tan[g, jt])
    tan[g - 2, jt] = np.where(neumann, tan[g + 1, jt] + 3.0 * sigma * dn, 2.0 * at_t.tangential - tan[g + 1, jt])


def pad(arr: np.ndarray) -> np.ndarray:
    """Embed arr in a NaN-filled array with GHOST_DEPTH layers."""
    g = GHOST_DEPTH
    out = np.full((arr.shape[0] + 2 * g, arr.shape[1] + 2 * g), np.nan)
    out[g:-g, g:-g] = arr
    return out


def fill_ghost_bcs(
    state: StaggeredState,
    bcs: BoundaryConditionSet,
    t: float,
    grid: GridSpec,
    reference: Optional[ReferenceField] = None,
    homogeneous: bool = False,
) -> GhostedState:
    """Pad state and fill two ghost layers realizing the boundary conditions.

    Prescribed boundary-normal faces are overwritten first. y-ghosts are filled along
    the south and north sides, then x-ghosts on every padded row, which also fills corners.

    Args:
        state: Interior fields
        bcs: Boundary conditions per side
        t: Time at which boundary data is sampled
        grid: Grid the state lives on
        reference: Analytic field for segments with use_reference
        homogeneous: Zero all boundary data (operator assembly)

    Returns:
        GhostedState with every ghost of depth GHOST_DEPTH finite

    Raises:
        ContractViolationError: Shapes inconsistent with grid
    """
    state.check(grid)
    fixed = apply_normal_bcs(state, bcs, t, grid, reference, homogeneous)
    ghosted = GhostedState(ug=pad(fixed.u), vg=pad(fixed.v), pg=pad(fixed.p))
    for side in (Boundary.SOUTH, Boundary.NORTH):
        _fill_side(side, ghosted, bcs, t, grid, reference, homogeneous, all_rows=False)
    for side in (Boundary.WEST, Boundary.EAST):
        _fill_side(side, ghosted, bcs, t, grid, reference, homogeneous, all_rows=True)
    return ghosted


def apply_divergence(state: StaggeredState, grid: GridSpec) -> np.ndarray:
    """Cell-centred divergence (u[i+1] - u[i])/h + (v[:, j+1] - v[:, j])/h."""
    if state.u.shape != grid.u_shape or state.v.shape != grid.v_shape:
        raise ContractViolationError(
            f"velocity shapes {state.u.shape}, {state.v.shape} do not match grid {grid.u_shape}, {grid.v_shape}"
        )
    return (np.diff(state.u, axis=0) + np.diff(state.v, axis=1)) / grid.h


def apply_gradient_std(p: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Face gradient of a cell field.

    p is either the interior (nx, ny) array, in which case boundary faces see a
    zero-gradient extension, or a ghosted array whose first ghost layer is used.
    """
    g = GHOST_DEPTH
    if p.shape == grid.p_shape:
        core = np.pad(p, 1, mode="edge")
    elif p.shape == (grid.nx + 2 * g, grid.ny + 2 * g):
        core = p[g - 1 : p.shape[0] - g + 1, g - 1 : p.shape[1] - g + 1]
    else:
        raise ContractViolationError(f"pressure has shape {p.shape}, expected {grid.p_shape} or ghosted")
    gx = np.diff(core[:, 1:-1], axis=0) / grid.h
    gy = np.diff(core[1:-1, :], axis=1) / grid.h
    if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
        raise ContractViolationError("pressure gradient reads unfilled ghosts or non-finite values")
    return gx, gy


def apply_laplacian_std(fg: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Five-point Laplacian of a ghosted face component, returned on the interior faces.

    Raises:
        ContractViolationError: First ghost layer not filled or not finite
    """
    g = GHOST_DEPTH
    if fg.ndim != 2 or fg.shape[0] < 2 * g + 1 or fg.shape[1] < 2 * g + 1:
        raise ContractViolationError(f"ghosted field has unusable shape {fg.shape}")
    if fg.shape not in ((grid.nx + 1 + 2 * g, grid.ny + 2 * g), (grid.nx + 2 * g, grid.ny + 1 + 2 * g)):
        raise ContractViolationError(f"ghosted field shape {fg.shape} does not match grid")
    ring = fg[g - 1 : fg.shape[0] - g + 1, g - 1 : fg.shape[1] - g + 1]
    if not (np.all(np.isfinite(ring[1:-1, :])) and np.all(np.isfinite(ring[:, 1:-1]))):
        raise ContractViolationError("Laplacian stencil reads unfilled ghost values")
    c = ring[1:-1, 1:-1]
    return (ring[2:, 1:-1] + ring[:-2, 1:-1] + ring[1:-1, 2:] + ring[1:-1, :-2] - 4.0 * c) / grid.h**2


class NormKind(str, Enum):
    """Discrete norms used in error reports."""
    L2 = "L2"
    LINF = "Linf"


def discrete_norm(
    field: np.ndarray,
    grid: GridSpec,
    mask: Optional[np.ndarray] = None,
    kind: NormKind = NormKind.L2,
) -> float:
    """sqrt(h^2 * sum e^2) or max |e| over the masked entries.

    Raises:
        ValueError: mask selects no entry
    """
    values = field if mask is None else field[mask]
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("mask selects no entries")
    if kind == NormKind.LINF:
        return float(np.max(np.abs(values)))
    return float(math.sqrt(grid.h**2 * np.sum(values**2)))


def assemble_by_probing(
    op: Callable[[np.ndarray], np.ndarray],
    in_shape: tuple[int, int],
    out_shape: tuple[int, int],
) -> sps.csr_matrix:
    """Sparse matrix of a linear lattice operator with index reach at most one.

    The operator is applied to nine colourings (i mod 3, j mod 3); an output entry
    (a, b) is attributed to the unique coloured input within one index of it.
    """
    rows, cols, vals = [], [], []
    ai, bi = np.meshgrid(np.arange(out_shape[0]), np.arange(out_shape[1]), indexing="ij")
    for cx in range(3):
        for cy in range(3):
            probe = np.zeros(in_shape)
            probe[cx::3, cy::3] = 1.0
            resp = op(probe)
            # the input index within {a-1, a, a+1} carrying colour cx
            src_i = ai - 1 + (cx - (ai - 1)) % 3
            src_j = bi - 1 + (cy - (bi - 1)) % 3
            keep = (resp != 0.0) & (src_i >= 0) & (src_i < in_shape[0]) & (src_j >= 0) & (src_j < in_shape[1])
            rows.append(np.ravel_multi_index((ai[keep], bi[keep]), out_shape))
            cols.append(np.ravel_multi_index((src_i[keep], src_j[keep]), in_shape))
            vals.append(resp[keep])
    n_out = out_shape[0] * out_shape[1]
    n_in = in_shape[0] * in_shape[1]
    return sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_out, n_in)
    )

"""Interface crossings of finite-difference stencil arms and side classification.

Grid lines come in four families:
- cell rows    y = y0 + (j+1/2) h   (horizontal)
- face rows    y = y0 + j h         (horizontal)
- cell columns x = x0 + (i+1/2) h   (vertical)
- face columns x = x0 + i h         (vertical)

Each stencil family reads lattice points along one line family (for instance the
x-arms of the u Laplacian are the u faces along cell rows). A crossing between two
consecutive lattice points a < c < b is recorded with the sign of n . d, where d is the
direction of increasing coordinate along the line. After a crossing with positive sign
the walk is on the positive side.

Nodes are nudged deterministically off every half-grid line before crossings are
searched, so no segment endpoint sits on a grid line.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterator, Optional

import numpy as np

from app.core.exceptions import GeometryError
from app.services.grid_service import GridSpec
from app.services.interface_mesh_service import InterfaceMesh

logger = logging.getLogger(__name__)

# Configuration
SQRT_EPS = math.sqrt(np.finfo(float).eps)
NUDGE_FACTOR = 2.0


class Axis(str, Enum):
    """Direction a grid line runs in."""
    X = "x"
    Y = "y"


class FluidSide(IntEnum):
    """Side of the interface a grid point lies on."""
    PLUS = 1
    MINUS = -1


class LineKind(str, Enum):
    CELL_ROWS = "cell_rows"
    FACE_ROWS = "face_rows"
    CELL_COLUMNS = "cell_columns"
    FACE_COLUMNS = "face_columns"


# line kind -> (axis, offset of the line positions in units of h)
_LINES = {
    LineKind.CELL_ROWS: (Axis.X, 0.5),
    LineKind.FACE_ROWS: (Axis.X, 0.0),
    LineKind.CELL_COLUMNS: (Axis.Y, 0.5),
    LineKind.FACE_COLUMNS: (Axis.Y, 0.0),
}


class StencilFamily(str, Enum):
    """Stencil arms that may cross the interface."""
    GRADIENT_X = "gradient_x"
    GRADIENT_Y = "gradient_y"
    LAPLACIAN_U_X = "laplacian_u_x"
    LAPLACIAN_U_Y = "laplacian_u_y"
    LAPLACIAN_V_X = "laplacian_v_x"
    LAPLACIAN_V_Y = "laplacian_v_y"
    DIVERGENCE_X = "divergence_x"
    DIVERGENCE_Y = "divergence_y"


# family -> (line kind, offset of lattice points along the line in units of h)
FAMILY_LINES = {
    StencilFamily.GRADIENT_X: (LineKind.CELL_ROWS, 0.5),
    StencilFamily.GRADIENT_Y: (LineKind.CELL_COLUMNS, 0.5),
    StencilFamily.LAPLACIAN_U_X: (LineKind.CELL_ROWS, 0.0),
    StencilFamily.LAPLACIAN_U_Y: (LineKind.FACE_COLUMNS, 0.5),
    StencilFamily.LAPLACIAN_V_X: (LineKind.FACE_ROWS, 0.5),
    StencilFamily.LAPLACIAN_V_Y: (LineKind.CELL_COLUMNS, 0.0),
    StencilFamily.DIVERGENCE_X: (LineKind.CELL_ROWS, 0.0),
    StencilFamily.DIVERGENCE_Y: (LineKind.CELL_COLUMNS, 0.0),
}


@dataclass
class IntersectionRecord:
    """One crossing of a stencil arm by an interface element."""

    family: StencilFamily
    axis: Axis
    line: int
    point: tuple[float, float]
    element: int
    s: float
    normal: tuple[float, float]
    lower: int
    upper: int
    d_plus: float


@dataclass
class LineCrossings:
    """All crossings of one line family, as parallel arrays."""

    kind: LineKind
    line: np.ndarray
    coord: np.ndarray
    point: np.ndarray
    element: np.ndarray
    s: np.ndarray
    normal: np.ndarray
    sign: np.ndarray

    @property
    def size(self) -> int:
        return int(self.line.size)


@dataclass
class FamilyCrossings:
    """Crossings of one stencil family with the straddling lattice indices."""

    family: StencilFamily
    crossings: LineCrossings
    lower: np.ndarray
    d_plus: np.ndarray
    valid: np.ndarray

    def records(self) -> Iterator[IntersectionRecord]:
        axis = _LINES[self.crossings.kind][0]
        c = self.crossings
        for k in np.flatnonzero(self.valid):
            yield IntersectionRecord(
                family=self.family,
                axis=axis,
                line=int(c.line[k]),
                point=(float(c.point[k, 0]), float(c.point[k, 1])),
                element=int(c.element[k]),
                s=float(c.s[k]),
                normal=(float(c.normal[k, 0]), float(c.normal[k, 1])),
                lower=int(self.lower[k]),
                upper=int(self.lower[k]) + 1,
                d_plus=float(self.d_plus[k]),
            )


@dataclass
class Intersections:
    """Crossings of every line family and every stencil family for one interface position."""

    lines: dict[LineKind, LineCrossings]
    families: dict[StencilFamily, FamilyCrossings]
    positions: np.ndarray

    def records(self, family: StencilFamily) -> list[IntersectionRecord]:
        return list(self.families[family].records())

    @property
    def count(self) -> int:
        return sum(int(f.valid.sum()) for f in self.families.values())


@dataclass
class SideMap:
    """Side of every u face, v face and cell centre (int8 arrays of +1 / -1)."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    @classmethod
    def uniform(cls, grid: GridSpec, side: FluidSide = FluidSide.PLUS) -> "SideMap":
        return cls(
            u=np.full(grid.u_shape, int(side), dtype=np.int8),
            v=np.full(grid.v_shape, int(side), dtype=np.int8),
            p=np.full(grid.p_shape, int(side), dtype=np.int8),
        )


def perturb_nodes(positions: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Move node coordinates off every half-grid line.

    Coordinates closer than sqrt(eps) h to a line x0 + k h/2 are placed at
    2 sqrt(eps) h on their own side; exactly on a line they go to the high side.
    Near the two domain boundary lines they always go outward, so an open interface
    ending on the boundary crosses the boundary face lines.
    """
    out = np.array(positions, dtype=float, copy=True)
    half = 0.5 * grid.h
    tol = SQRT_EPS * grid.h
    for dim, origin, n_cells in ((0, grid.x0, grid.nx), (1, grid.y0, grid.ny)):
        coord = out[:, dim]
        k = np.round((coord - origin) / half)
        dist = coord - (origin + k * half)
        near = np.abs(dist) < tol
        direction = np.sign(dist)
        direction[direction == 0] = 1.0
        direction[k == 0] = -1.0
        direction[k == 2 * n_cells] = 1.0
        coord[near] = origin + k[near] * half + direction[near] * NUDGE_FACTOR * tol
    moved = int(np.count_nonzero(np.any(out != positions, axis=1)))
    if moved:
        logger.debug("Perturbed %d interface node(s) off grid lines", moved)
    return out


def intersect_segment_gridline(
    p0: np.ndarray, p1: np.ndarray, axis: Axis, c: float
) -> Optional[tuple[np.ndarray, float]]:
    """Crossing of segment p0-p1 with the grid line through c running along axis.

    A line running along Y is x = c; a line running along X is y = c. The segment
    must strictly straddle the line.

    Returns:
        (point, s) with s in (0, 1), or None
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if np.all(p0 == p1):
        raise ValueError("segment endpoints coincide")
    k = 0 if axis == Axis.Y else 1
    d0, d1 = p0[k] - c, p1[k] - c
    if d0 * d1 >= 0.0:
        return None
    s = d0 / (d0 - d1)
    point = p0 + s * (p1 - p0)
    point[k] = c
    return point, float(s)


def _line_crossings(positions: np.ndarray, mesh: InterfaceMesh, normals: np.ndarray, grid: GridSpec, kind: LineKind) -> LineCrossings:
    axis, offset = _LINES[kind]
    k = 0 if axis == Axis.Y else 1
    along = 1 - k
    origin = grid.origin[k]
    n_lines = (grid.nx if k == 0 else grid.ny) + (1 if offset == 0.0 else 0)

    a, b = mesh.elements[:, 0], mesh.elements[:, 1]
    q0, q1 = positions[a], positions[b]
    lo = np.minimum(q0[:, k], q1[:, k])
    hi = np.maximum(q0[:, k], q1[:, k])
    first = np.maximum(np.ceil((lo - origin) / grid.h - offset), 0).astype(np.int64)
    last = np.minimum(np.floor((hi - origin) / grid.h - offset), n_lines - 1).astype(np.int64)
    counts = np.maximum(last - first + 1, 0)

    elem = np.repeat(np.arange(mesh.n_elements), counts)
    starts = np.repeat(first, counts)
    ramp = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    line = starts + ramp
    c = origin + (line + offset) * grid.h

    d0 = q0[elem, k] - c
    d1 = q1[elem, k] - c
    hit = d0 * d1 < 0.0
    elem, line, c, d0, d1 = elem[hit], line[hit], c[hit], d0[hit], d1[hit]
    s = d0 / (d0 - d1)
    point = q0[elem] + s[:, None] * (q1[elem] - q0[elem])
    point[:, k] = c
    normal = normals[elem]
    sign = np.where(normal[:, along] > 0.0, 1, -1).astype(np.int8)

    order = np.lexsort((point[:, along], line))
    return LineCrossings(
        kind=kind,
        line=line[order],
        coord=point[order, along],
        point=point[order],
        element=elem[order],
        s=s[order],
        normal=normal[order],
        sign=sign[order],
    )


def _family_crossings(family: StencilFamily, lines: LineCrossings, grid: GridSpec) -> FamilyCrossings:
    kind, lattice_offset = FAMILY_LINES[family]
    axis, _ = _LINES[kind]
    along = 0 if axis == Axis.X else 1
    origin = grid.origin[along]
    n_lattice = (grid.nx if along == 0 else grid.ny) + (1 if lattice_offset == 0.0 else 0)

    lower = np.floor((lines.coord - origin) / grid.h - lattice_offset).astype(np.int64)
    x_lower = origin + (lower + lattice_offset) * grid.h
    before = lines.coord - x_lower
    d_plus = np.where(lines.sign > 0, grid.h - before, before)
    valid = (lower >= 0) & (lower + 1 < n_lattice)

    if lines.size:
        key = lines.line * (n_lattice + 2) + lower
        _, counts = np.unique(key[valid], return_counts=True)
        if np.any(counts > 1):
            logger.debug("%s: %d stencil arm(s) crossed more than once", family.value, int(np.sum(counts > 1)))
    return FamilyCrossings(family=family, crossings=lines, lower=lower, d_plus=d_plus, valid=valid)


def build_intersections(mesh: InterfaceMesh, grid: GridSpec, perturb: bool = True) -> Intersections:
    """Find every interface crossing of every stencil family.

    Args:
        mesh: Interface at its current position
        grid: Eulerian grid
        perturb: Nudge nodes off grid lines first

    Returns:
        Intersections holding per-line and per-family crossing arrays
    """
    positions = perturb_nodes(mesh.current, grid) if perturb else np.array(mesh.current, dtype=float)
    if mesh.n_elements == 0:
        normals = np.zeros((0, 2))
    else:
        edge = positions[mesh.elements[:, 1]] - positions[mesh.elements[:, 0]]
        length = np.hypot(edge[:, 0], edge[:, 1])
        if np.any(length <= 0.0):
            raise GeometryError("interface element collapsed to a point")
        normals = np.stack([edge[:, 1], -edge[:, 0]], axis=1) / length[:, None]
    lines = {kind: _line_crossings(positions, mesh, normals, grid, kind) for kind in LineKind}
    families = {fam: _family_crossings(fam, lines[FAMILY_LINES[fam][0]], grid) for fam in StencilFamily}
    return Intersections(lines=lines, families=families, positions=positions)


def _walk(lines: LineCrossings, n_lines: int, lattice: np.ndarray, grid: GridSpec, along: int) -> np.ndarray:
    """Side of every lattice point on every line from the crossings; 0 where a line has none.

    Returns an (n_lines, n_lattice) int8 array.
    """
    out = np.zeros((n_lines, lattice.size), dtype=np.int8)
    if lines.size == 0:
        return out
    span = (grid.nx if along == 0 else grid.ny) * grid.h + 4.0 * grid.h
    origin = grid.origin[along]
    rel = np.clip(lines.coord - origin, -grid.h, span - 3.0 * grid.h)
    keys = lines.line * span + rel
    counts = np.bincount(lines.line, minlength=n_lines)
    starts = np.cumsum(counts) - counts

    line_idx = np.repeat(np.arange(n_lines), lattice.size)
    lat = np.tile(lattice - origin, n_lines)
    pos = np.searchsorted(keys, line_idx * span + lat)
    m = pos - starts[line_idx]
    has = counts[line_idx] > 0
    after = lines.sign[np.clip(pos - 1, 0, lines.size - 1)]
    before_first = -lines.sign[np.clip(starts[line_idx], 0, lines.size - 1)]
    side = np.where(m >= 1, after, before_first)
    side = np.where(has, side, 0)
    return side.reshape(n_lines, lattice.size).astype(np.int8)


def _combine(row: np.ndarray, col: np.ndarray, default: FluidSide, name: str, coords) -> np.ndarray:
    clash = (row != 0) & (col != 0) & (row != col)
    if np.any(clash):
        i, j = np.argwhere(clash)[0]
        x, y = coords
        raise GeometryError(f"row and column walks disagree on the side of {name}[{i}, {j}]", (float(x[i, j]), float(y[i, j])))
    out = np.where(row != 0, row, col)
    return np.where(out != 0, out, int(default)).astype(np.int8)


def classify_sides(intersections: Intersections, grid: GridSpec, default: FluidSide = FluidSide.PLUS) -> SideMap:
    """Side of every grid location from parity walks along rows and columns.

    Raises:
        GeometryError: A point's row walk and column walk disagree
    """
    h = grid.h
    xs_cell = grid.x0 + h * (np.arange(grid.nx) + 0.5)
    xs_face = grid.x0 + h * np.arange(grid.nx + 1)
    ys_cell = grid.y0 + h * (np.arange(grid.ny) + 0.5)
    ys_face = grid.y0 + h * np.arange(grid.ny + 1)
    lines = intersections.lines

    # rows give arrays indexed [j, i]; transpose to [i, j]
    p_row = _walk(lines[LineKind.CELL_ROWS], grid.ny, xs_cell, grid, 0).T
    p_col = _walk(lines[LineKind.CELL_COLUMNS], grid.nx, ys_cell, grid, 1)
    u_row = _walk(lines[LineKind.CELL_ROWS], grid.ny, xs_face, grid, 0).T
    u_col = _walk(lines[LineKind.FACE_COLUMNS], grid.nx + 1, ys_cell, grid, 1)
    v_row = _walk(lines[LineKind.FACE_ROWS], grid.ny + 1, xs_cell, grid, 0).T
    v_col = _walk(lines[LineKind.CELL_COLUMNS], grid.nx, ys_face, grid, 1)

    return SideMap(
        u=_combine(u_row, u_col, default, "u", grid.u_points()),
        v=_combine(v_row, v_col, default, "v", grid.v_points()),
        p=_combine(p_row, p_col, default, "p", grid.p_points()),
    )

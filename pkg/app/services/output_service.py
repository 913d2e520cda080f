"""Run artifacts: field dumps, VTK snapshots, CSV reports and checkpoints.

Field dumps and checkpoints share one container layout:

    line 1   ASCII magic, e.g. "IIMFIELD 1"
    line 2   JSON header with sorted keys; header["arrays"] lists {name, shape} in file order
    rest     raw little-endian float64 arrays, C order, concatenated in header order

Every writer is deterministic, so identical inputs give byte-identical files.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from app.services.geometry_service import Intersections
from app.services.grid_service import GridSpec, StaggeredState
from app.services.interface_mesh_service import InterfaceMesh
from app.services.jump_service import JumpField
from app.services.report_service import ErrorReport
from app.services.solver_service import TimeStepperState

logger = logging.getLogger(__name__)

FIELD_MAGIC = "IIMFIELD 1"
CHECKPOINT_MAGIC = "IIMCHECK 1"
DTYPE = np.dtype("<f8")

ERROR_HEADER = ["field", "norm", "region", "value"]
FORCE_HEADER = ["time", "C_D", "C_L"]
LAGRANGIAN_HEADER = ["node", "component", "x", "y", "U_x", "U_y", "p_plus", "wss_x", "wss_y"]
CONVERGENCE_HEADER = ["nx", "h", "status", "key", "error", "order"]
CROSSING_HEADER = ["family", "line", "coord", "element", "s", "n_x", "n_y"]
JUMP_HEADER = ["node", "x", "y", "p_jump", "jux_x", "jux_y", "juy_x", "juy_y"]


def _fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _ensure_parent(path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create directory {path.parent}: {exc}") from exc
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = _ensure_parent(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


# --- Binary container ---


def write_container(path: Path, magic: str, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> Path:
    path = _ensure_parent(path)
    names = list(arrays)
    header = dict(meta)
    header["arrays"] = [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names]
    try:
        with path.open("wb") as fh:
            fh.write((magic + "\n").encode("ascii"))
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
            for n in names:
                fh.write(np.ascontiguousarray(arrays[n], dtype=DTYPE).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_container(path: Path, magic: str) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Header and arrays of a container file.

    Raises:
        ValueError: Wrong magic line or truncated payload
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    first = raw.find(b"\n")
    second = raw.find(b"\n", first + 1)
    if first < 0 or second < 0 or raw[:first].decode("ascii", "replace") != magic:
        raise ValueError(f"{path} is not a {magic!r} file")
    header = json.loads(raw[first + 1 : second])
    offset = second + 1
    arrays = {}
    for spec in header.pop("arrays"):
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise ValueError(f"{path} is truncated in array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype=DTYPE, count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    return header, arrays


def _grid_meta(grid: GridSpec) -> dict[str, Any]:
    return {"origin": list(grid.origin), "extent": list(grid.extent), "nx": grid.nx, "ny": grid.ny, "h": grid.h}


def _grid_from_meta(meta: dict[str, Any]) -> GridSpec:
    return GridSpec(origin=tuple(meta["origin"]), extent=tuple(meta["extent"]), nx=meta["nx"], ny=meta["ny"], h=meta["h"])


def write_field_dump(path: Path, state: StaggeredState, grid: GridSpec, t: float) -> Path:
    meta = {"grid": _grid_meta(grid), "t": float(t)}
    return write_container(path, FIELD_MAGIC, meta, {"u": state.u, "v": state.v, "p": state.p})


def read_field_dump(path: Path) -> tuple[StaggeredState, GridSpec, float]:
    meta, arrays = read_container(path, FIELD_MAGIC)
    grid = _grid_from_meta(meta["grid"])
    state = StaggeredState(u=arrays["u"], v=arrays["v"], p=arrays["p"])
    state.check(grid)
    return state, grid, float(meta["t"])


# --- Checkpoints ---


def write_checkpoint(path: Path, st: TimeStepperState, grid: GridSpec) -> Path:
    """Fields, interface arrays and stepper history needed to continue a run."""
    arrays = {"u": st.state.u, "v": st.state.v, "p": st.state.p}
    meta: dict[str, Any] = {"grid": _grid_meta(grid), "t": float(st.t), "step": int(st.step), "has_mesh": st.mesh is not None}
    if st.advection_prev is not None:
        arrays["advection_u"], arrays["advection_v"] = st.advection_prev
    if st.mesh is not None:
        mesh = st.mesh
        meta["closed"] = bool(mesh.closed)
        arrays.update(
            reference=mesh.reference,
            current=mesh.current,
            elements=mesh.elements.astype(float),
            node_component=mesh.node_component.astype(float),
        )
        if st.U_prev is not None:
            arrays["U_prev"] = st.U_prev
        if st.force is not None:
            arrays["force"] = st.force
    return write_container(path, CHECKPOINT_MAGIC, meta, arrays)


def read_checkpoint(path: Path) -> tuple[TimeStepperState, GridSpec]:
    meta, a = read_container(path, CHECKPOINT_MAGIC)
    grid = _grid_from_meta(meta["grid"])
    mesh = None
    if meta["has_mesh"]:
        mesh = InterfaceMesh(
            reference=a["reference"],
            current=a["current"],
            elements=a["elements"].astype(np.int64),
            closed=bool(meta["closed"]),
            node_component=a["node_component"].astype(np.int64),
        )
    advection = (a["advection_u"], a["advection_v"]) if "advection_u" in a else None
    st = TimeStepperState(
        state=StaggeredState(u=a["u"], v=a["v"], p=a["p"]),
        mesh=mesh,
        U_prev=a.get("U_prev"),
        t=float(meta["t"]),
        step=int(meta["step"]),
        advection_prev=advection,
        force=a.get("force"),
    )
    st.state.check(grid)
    return st, grid


# --- VTK ---


def cell_centred(state: StaggeredState) -> tuple[np.ndarray, np.ndarray]:
    return 0.5 * (state.u[:-1, :] + state.u[1:, :]), 0.5 * (state.v[:, :-1] + state.v[:, 1:])


def write_vtk(path: Path, state: StaggeredState, grid: GridSpec, title: str = "iim-flow") -> Path:
    """Legacy ASCII VTK STRUCTURED_POINTS with cell-centred pressure and velocity."""
    path = _ensure_parent(path)
    uc, vc = cell_centred(state)
    # VTK orders points with x fastest
    p = state.p.T.ravel()
    vel = np.column_stack([uc.T.ravel(), vc.T.ravel(), np.zeros(uc.size)])
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {grid.nx} {grid.ny} 1",
        f"ORIGIN {grid.x0 + 0.5 * grid.h!r} {grid.y0 + 0.5 * grid.h!r} 0.0",
        f"SPACING {grid.h!r} {grid.h!r} 1.0",
        f"POINT_DATA {grid.nx * grid.ny}",
        "SCALARS pressure double 1",
        "LOOKUP_TABLE default",
    ]
    lines += [repr(float(x)) for x in p]
    lines.append("VECTORS velocity double")
    lines += [f"{a!r} {b!r} {c!r}" for a, b, c in vel.tolist()]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def check_vtk(path: Path) -> tuple[int, int]:
    """Verify that the data blocks of a VTK file written by write_vtk match its DIMENSIONS.

    Raises:
        ValueError: Header malformed or data counts inconsistent
    """
    rows = Path(path).read_text().splitlines()
    if not rows or not rows[0].startswith("# vtk DataFile"):
        raise ValueError(f"{path} has no VTK header")
    try:
        dims = next(r for r in rows if r.startswith("DIMENSIONS")).split()[1:]
        nx, ny = int(dims[0]), int(dims[1])
        n_points = int(next(r for r in rows if r.startswith("POINT_DATA")).split()[1])
        scal = rows.index("LOOKUP_TABLE default") + 1
        vec = rows.index("VECTORS velocity double")
    except (StopIteration, ValueError, IndexError) as exc:
        raise ValueError(f"{path} has a malformed VTK header: {exc}") from exc
    if n_points != nx * ny:
        raise ValueError(f"{path}: POINT_DATA {n_points} does not match DIMENSIONS {nx}x{ny}")
    if vec - scal != n_points or len(rows) - vec - 1 != n_points:
        raise ValueError(f"{path}: data blocks do not hold {n_points} values")
    return nx, ny


# --- CSV reports ---


def write_error_csv(path: Path, report: ErrorReport) -> Path:
    return write_csv(path, ERROR_HEADER, ((e.field, e.norm, e.region, e.value) for e in report.entries))


def write_force_csv(path: Path, coefficients: np.ndarray) -> Path:
    return write_csv(path, FORCE_HEADER, np.asarray(coefficients, dtype=float).reshape(-1, 3).tolist())


def write_lagrangian_csv(
    path: Path,
    mesh: InterfaceMesh,
    U: np.ndarray,
    p_plus: Optional[np.ndarray] = None,
    wss: Optional[np.ndarray] = None,
) -> Path:
    p_plus = np.full(mesh.n_nodes, np.nan) if p_plus is None else p_plus
    wss = np.full((mesh.n_nodes, 2), np.nan) if wss is None else wss
    rows = (
        (k, int(mesh.node_component[k]), *mesh.current[k].tolist(), *U[k].tolist(), float(p_plus[k]), *wss[k].tolist())
        for k in range(mesh.n_nodes)
    )
    return write_csv(path, LAGRANGIAN_HEADER, rows)


def write_convergence_csv(path: Path, table) -> Path:
    """One row per level and error key; order is against the next coarser successful level."""
    orders = {(o.key, o.h_fine): o.order for o in table.orders}
    rows = []
    for row in table.rows:
        if not row.errors:
            rows.append((row.nx, row.h, row.status, "", "", ""))
        for key in sorted(row.errors):
            order = orders.get((key, row.h))
            rows.append((row.nx, row.h, row.status, key, row.errors[key], "" if order is None else order))
    return write_csv(path, CONVERGENCE_HEADER, rows)


def write_crossings_csv(path: Path, intersections: Intersections) -> Path:
    rows = []
    for family, fc in intersections.families.items():
        c = fc.crossings
        for k in np.flatnonzero(fc.valid):
            rows.append((family.value, int(c.line[k]), c.coord[k], int(c.element[k]), c.s[k], c.normal[k, 0], c.normal[k, 1]))
    return write_csv(path, CROSSING_HEADER, rows)


def write_jumps_csv(path: Path, mesh: InterfaceMesh, jumps: JumpField) -> Path:
    rows = (
        (k, *mesh.current[k].tolist(), jumps.pj[k], *jumps.jux[k].tolist(), *jumps.juy[k].tolist())
        for k in range(mesh.n_nodes)
    )
    return write_csv(path, JUMP_HEADER, rows)

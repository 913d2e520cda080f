"""Piecewise-linear (P1) interface meshes.

An interface is a polyline of two-node segment elements. Node data is kept in two
configurations: reference X (fixed) and current chi (moves with the fluid). Prescribed
positions xi are evaluated from the reference nodes by the kinematics and are not stored.
The normal of an element is its tangent rotated by -90 degrees, so a closed curve
traversed counter-clockwise has outward normals and the region on the normal side is
the positive side.

Integrals over the interface use 3-point Gauss-Legendre quadrature per element over
the reference configuration. L2 projections solve the mass system with Jacobi-scaled
conjugate gradients.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Annotated, Callable, Literal, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sps
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, Field, model_validator
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg

from app.core.config import settings
from app.core.exceptions import DegenerateElementError, ProjectionSolveError

logger = logging.getLogger(__name__)

# Configuration
QUADRATURE_POINTS = 3
MIN_CLOSED_ELEMENTS = 3
LOCAL_MASS = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])


class Configuration(str, Enum):
    """Which node positions an element frame is computed from."""
    CURRENT = "current"
    REFERENCE = "reference"


class Orientation(str, Enum):
    """Traversal direction of generated closed curves."""
    CCW = "ccw"
    CW = "cw"


@dataclass
class InterfaceMesh:
    """Nodes in reference and current configurations plus segment connectivity.

    Attributes:
        reference: (M, 2) reference positions X
        current: (M, 2) current positions chi
        elements: (E, 2) node indices; element e runs from elements[e, 0] to elements[e, 1]
        closed: Every node has exactly two incident elements
        node_component: (M,) component id per node
        element_component: (E,) component id per element
    """

    reference: np.ndarray
    current: np.ndarray
    elements: np.ndarray
    closed: bool
    node_component: np.ndarray = field(default=None)
    element_component: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        self.elements = np.asarray(self.elements, dtype=np.int64)
        if self.elements.ndim != 2 or self.elements.shape[1] != 2:
            raise ValueError("elements must be an (E, 2) index array")
        n_nodes = self.reference.shape[0]
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n_nodes):
            raise ValueError("element references a node index out of range")
        if self.node_component is None:
            self.node_component = np.zeros(n_nodes, dtype=np.int64)
        if self.element_component is None:
            self.element_component = self.node_component[self.elements[:, 0]]

    @property
    def n_nodes(self) -> int:
        return self.reference.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_components(self) -> int:
        return int(self.node_component.max()) + 1 if self.n_nodes else 0

    def with_current(self, current: np.ndarray) -> "InterfaceMesh":
        return replace(self, current=np.array(current, dtype=float))

    def positions(self, config: Configuration = Configuration.CURRENT) -> np.ndarray:
        return self.current if config == Configuration.CURRENT else self.reference


@dataclass
class ElementFrame:
    """Per-element geometry; arrays have a leading element axis when built for a whole mesh."""

    tangent: np.ndarray
    normal: np.ndarray
    length_current: np.ndarray
    length_reference: np.ndarray
    jacobian: np.ndarray


def eval_shape(s: Union[float, np.ndarray]) -> np.ndarray:
    """P1 basis weights (1 - s, s) at local coordinate s in [0, 1].

    Raises:
        ValueError: s outside [0, 1]
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
        raise ValueError(f"local coordinate must lie in [0, 1], got {s}")
    return np.stack([1.0 - s_arr, s_arr], axis=-1)


@lru_cache(maxsize=4)
def quadrature_rule(n_points: int = QUADRATURE_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    x, w = leggauss(n_points)
    return 0.5 * (x + 1.0), 0.5 * w


def element_frames(mesh: InterfaceMesh, config: Configuration = Configuration.CURRENT) -> ElementFrame:
    """Frames of every element.

    Raises:
        DegenerateElementError: An element has coincident nodes
    """
    pos = mesh.positions(config)
    a, b = mesh.elements[:, 0], mesh.elements[:, 1]
    edge = pos[b] - pos[a]
    length = np.hypot(edge[:, 0], edge[:, 1])
    ref_edge = mesh.reference[b] - mesh.reference[a]
    length_ref = np.hypot(ref_edge[:, 0], ref_edge[:, 1])
    cur_edge = mesh.current[b] - mesh.current[a]
    length_cur = np.hypot(cur_edge[:, 0], cur_edge[:, 1])
    bad = (length <= 0.0) | (length_ref <= 0.0) | (length_cur <= 0.0)
    if np.any(bad):
        e = int(np.argmax(bad))
        raise DegenerateElementError(f"element {e} has coincident nodes {a[e]} and {b[e]}")
    tangent = edge / length[:, None]
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    return ElementFrame(
        tangent=tangent,
        normal=normal,
        length_current=length_cur,
        length_reference=length_ref,
        jacobian=length_ref / length_cur,
    )


def element_frame(mesh: InterfaceMesh, element: int, config: Configuration = Configuration.CURRENT) -> ElementFrame:
    """Frame of a single element (tangent, normal, lengths and jacobian ref/current)."""
    sub = replace(mesh, elements=mesh.elements[element : element + 1], element_component=None)
    frames = element_frames(sub, config)
    return ElementFrame(
        tangent=frames.tangent[0],
        normal=frames.normal[0],
        length_current=float(frames.length_current[0]),
        length_reference=float(frames.length_reference[0]),
        jacobian=float(frames.jacobian[0]),
    )


def evaluate_on_elements(mesh: InterfaceMesh, nodal: np.ndarray, s: Union[float, np.ndarray]) -> np.ndarray:
    """Interpolate a nodal field to local coordinate s on every element."""
    phi = eval_shape(s)
    a, b = mesh.elements[:, 0], mesh.elements[:, 1]
    va, vb = nodal[a], nodal[b]
    if nodal.ndim == 1:
        return phi[..., 0] * va + phi[..., 1] * vb
    return phi[..., 0, None] * va + phi[..., 1, None] * vb


def quadrature_points(
    mesh: InterfaceMesh, config: Configuration = Configuration.CURRENT
) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points (E, Q, 2) and reference-measure weights (E, Q)."""
    s_q, w_q = quadrature_rule()
    pos = mesh.positions(config)
    a, b = mesh.elements[:, 0], mesh.elements[:, 1]
    points = pos[a][:, None, :] * (1.0 - s_q)[None, :, None] + pos[b][:, None, :] * s_q[None, :, None]
    ref_len = np.hypot(*(mesh.reference[b] - mesh.reference[a]).T)
    return points, ref_len[:, None] * w_q[None, :]


def assemble_mass_matrix(mesh: InterfaceMesh) -> sps.csr_matrix:
    """P1 mass matrix over the reference configuration.

    Raises:
        DegenerateElementError: An element has zero reference length
    """
    a, b = mesh.elements[:, 0], mesh.elements[:, 1]
    lengths = np.hypot(*(mesh.reference[b] - mesh.reference[a]).T)
    if np.any(lengths <= 0.0):
        e = int(np.argmax(lengths <= 0.0))
        raise DegenerateElementError(f"element {e} has zero reference length")
    rows = np.concatenate([a, a, b, b])
    cols = np.concatenate([a, b, a, b])
    vals = np.concatenate(
        [lengths * LOCAL_MASS[0, 0], lengths * LOCAL_MASS[0, 1], lengths * LOCAL_MASS[1, 0], lengths * LOCAL_MASS[1, 1]]
    )
    return sps.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def assemble_load(mesh: InterfaceMesh, values_q: np.ndarray) -> np.ndarray:
    """Load vector b_l = sum over quadrature points of w * psi * phi_l.

    Args:
        mesh: Interface mesh
        values_q: Integrand at quadrature points, shape (E, Q) or (E, Q, k)
    """
    s_q, w_q = quadrature_rule()
    a, b = mesh.elements[:, 0], mesh.elements[:, 1]
    lengths = np.hypot(*(mesh.reference[b] - mesh.reference[a]).T)
    weights = lengths[:, None] * w_q[None, :]
    values_q = np.asarray(values_q, dtype=float)
    trailing = values_q.shape[2:]
    wq = weights.reshape(weights.shape + (1,) * len(trailing))
    phi_a = (1.0 - s_q).reshape((1, -1) + (1,) * len(trailing))
    phi_b = s_q.reshape((1, -1) + (1,) * len(trailing))
    load = np.zeros((mesh.n_nodes,) + trailing)
    np.add.at(load, a, np.sum(wq * values_q * phi_a, axis=1))
    np.add.at(load, b, np.sum(wq * values_q * phi_b, axis=1))
    return load


class MassSolver:
    """Jacobi-preconditioned CG solves with one mesh's mass matrix."""

    def __init__(self, mesh: InterfaceMesh, rtol: Optional[float] = None):
        self.matrix = assemble_mass_matrix(mesh)
        self.rtol = settings.mass_rtol if rtol is None else rtol
        diag = self.matrix.diagonal()
        self._jacobi = sps.diags(1.0 / diag)
        self._lumped = np.asarray(self.matrix.sum(axis=1)).ravel()

    def solve(self, load: np.ndarray) -> np.ndarray:
        """Solve M c = load column by column.

        Raises:
            ProjectionSolveError: CG did not reach the tolerance
        """
        load = np.asarray(load, dtype=float)
        columns = load.reshape(load.shape[0], -1)
        out = np.zeros_like(columns)
        for k in range(columns.shape[1]):
            rhs = columns[:, k]
            norm = np.linalg.norm(rhs)
            if norm == 0.0:
                continue
            x0 = rhs / self._lumped
            sol, info = cg(self.matrix, rhs, x0=x0, rtol=self.rtol, atol=0.0, M=self._jacobi, maxiter=10 * len(rhs) + 100)
            residual = float(np.linalg.norm(self.matrix @ sol - rhs) / norm)
            if info != 0 or residual > 10.0 * self.rtol:
                raise ProjectionSolveError(
                    f"mass-matrix solve stalled (info={info}, relative residual={residual:.3e})",
                    residuals=[residual],
                )
            out[:, k] = sol
        return out.reshape(load.shape)


def project_l2(
    mesh: InterfaceMesh,
    integrand: Callable[[np.ndarray], np.ndarray],
    solver: Optional[MassSolver] = None,
) -> np.ndarray:
    """L2 projection of an element-wise integrand onto the nodal basis.

    Args:
        mesh: Interface mesh
        integrand: Called with the quadrature local coordinates s_q (Q,); returns values
            for every element at those points, shape (E, Q) or (E, Q, k)
        solver: Reusable mass solver for this mesh

    Returns:
        Nodal coefficients, shape (M,) or (M, k)

    Raises:
        ProjectionSolveError: Mass solve failed
    """
    s_q, _ = quadrature_rule()
    values_q = np.asarray(integrand(s_q), dtype=float)
    if values_q.shape[:2] != (mesh.n_elements, len(s_q)):
        raise ValueError(f"integrand returned shape {values_q.shape}, expected ({mesh.n_elements}, {len(s_q)}, ...)")
    if not np.all(np.isfinite(values_q)):
        raise ValueError("integrand is not finite at quadrature points")
    solver = solver or MassSolver(mesh)
    return solver.solve(assemble_load(mesh, values_q))


def integrate(mesh: InterfaceMesh, nodal: np.ndarray) -> np.ndarray:
    """Integral of a nodal field over the reference configuration."""
    s_q, _ = quadrature_rule()
    values_q = np.stack([evaluate_on_elements(mesh, nodal, s) for s in s_q], axis=1)
    _, weights = quadrature_points(mesh, Configuration.REFERENCE)
    weights = weights.reshape(weights.shape + (1,) * (values_q.ndim - 2))
    return np.sum(weights * values_q, axis=(0, 1))


# --- Generators ---


class LineShape(BaseModel):
    """Open straight segment from p0 to p1."""
    kind: Literal["line"] = "line"
    p0: tuple[float, float]
    p1: tuple[float, float]


class CircleShape(BaseModel):
    """Closed circle."""
    kind: Literal["circle"] = "circle"
    center: tuple[float, float]
    radius: float = Field(gt=0.0)
    orientation: Orientation = Orientation.CCW


class ChannelWallsShape(BaseModel):
    """Two parallel walls bounding a channel, clipped to a box.

    The centreline passes through center at the given angle. The lower wall runs
    against the centreline direction and the upper wall along it, so both normals
    point into the channel.
    """
    kind: Literal["channel"] = "channel"
    center: tuple[float, float]
    height: float = Field(gt=0.0)
    angle: float = 0.0
    bounds: tuple[float, float, float, float]

    @model_validator(mode="after")
    def _check_bounds(self) -> "ChannelWallsShape":
        xmin, ymin, xmax, ymax = self.bounds
        if xmax <= xmin or ymax <= ymin:
            raise ValueError("bounds must be (xmin, ymin, xmax, ymax) with positive size")
        return self


Shape = Annotated[Union[LineShape, CircleShape, ChannelWallsShape], Field(discriminator="kind")]


def _element_count(length: float, n_elements: Optional[int], m_fac: float, h: Optional[float]) -> int:
    if n_elements is not None:
        return int(n_elements)
    if h is None or h <= 0.0 or m_fac <= 0.0:
        raise ValueError("either n_elements or positive m_fac and h are required")
    return max(1, int(round(length / (m_fac * h))))


def _polyline(points: np.ndarray, closed: bool, component: int = 0) -> InterfaceMesh:
    n = points.shape[0]
    idx = np.arange(n)
    if closed:
        elements = np.stack([idx, np.roll(idx, -1)], axis=1)
    else:
        elements = np.stack([idx[:-1], idx[1:]], axis=1)
    return InterfaceMesh(
        reference=points.copy(),
        current=points.copy(),
        elements=elements,
        closed=closed,
        node_component=np.full(n, component, dtype=np.int64),
    )


def _clip_line(point: np.ndarray, direction: np.ndarray, bounds: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints of the infinite line point + t * direction inside bounds, snapped onto the box."""
    lows, highs = np.array(bounds[:2], dtype=float), np.array(bounds[2:], dtype=float)
    t_lo, t_hi = -math.inf, math.inf
    hit_lo, hit_hi = None, None
    for k in range(2):
        if direction[k] == 0.0:
            if not lows[k] <= point[k] <= highs[k]:
                raise DegenerateElementError("channel wall does not meet the bounding box")
            continue
        ta, tb = (lows[k] - point[k]) / direction[k], (highs[k] - point[k]) / direction[k]
        (ta, ea), (tb, eb) = sorted([(ta, (k, lows[k])), (tb, (k, highs[k]))], key=lambda item: item[0])
        if ta > t_lo:
            t_lo, hit_lo = ta, ea
        if tb < t_hi:
            t_hi, hit_hi = tb, eb
    if not t_hi > t_lo:
        raise DegenerateElementError("channel wall does not meet the bounding box")
    p0, p1 = point + t_lo * direction, point + t_hi * direction
    p0[hit_lo[0]] = hit_lo[1]
    p1[hit_hi[0]] = hit_hi[1]
    return p0, p1


def generate_mesh(
    shape: Shape,
    n_elements: Optional[int] = None,
    m_fac: float = 2.0,
    h: Optional[float] = None,
) -> InterfaceMesh:
    """Generate a uniform P1 mesh of a line, a circle or a pair of channel walls.

    Args:
        shape: Geometry description
        n_elements: Element count (per wall for channels); derived from m_fac * h if None
        m_fac: Target element length as a multiple of h
        h: Eulerian grid spacing

    Returns:
        InterfaceMesh with reference = current

    Raises:
        DegenerateElementError: Zero-length line or too few elements for a closed curve
    """
    if isinstance(shape, LineShape):
        p0, p1 = np.asarray(shape.p0, dtype=float), np.asarray(shape.p1, dtype=float)
        length = float(np.hypot(*(p1 - p0)))
        if length == 0.0:
            raise DegenerateElementError("line endpoints coincide")
        n = _element_count(length, n_elements, m_fac, h)
        s = np.linspace(0.0, 1.0, n + 1)[:, None]
        return _polyline(p0 + s * (p1 - p0), closed=False)

    if isinstance(shape, CircleShape):
        n = _element_count(2.0 * math.pi * shape.radius, n_elements, m_fac, h)
        if n < MIN_CLOSED_ELEMENTS:
            raise DegenerateElementError(f"a closed curve needs at least {MIN_CLOSED_ELEMENTS} elements, got {n}")
        theta = 2.0 * math.pi * np.arange(n) / n
        if shape.orientation == Orientation.CW:
            theta = -theta
        pts = np.asarray(shape.center) + shape.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return _polyline(pts, closed=True)

    if isinstance(shape, ChannelWallsShape):
        direction = np.array([math.cos(shape.angle), math.sin(shape.angle)])
        across = np.array([-direction[1], direction[0]])
        walls = []
        for sign in (-1.0, 1.0):
            p0, p1 = _clip_line(np.asarray(shape.center) + 0.5 * sign * shape.height * across, direction, shape.bounds)
            length = float(np.hypot(*(p1 - p0)))
            n = _element_count(length, n_elements, m_fac, h)
            s = np.linspace(0.0, 1.0, n + 1)[:, None]
            pts = p0 + s * (p1 - p0)
            pts[-1] = p1
            if sign < 0.0:
                pts = pts[::-1]
            walls.append(_polyline(pts, closed=False))
        return merge_meshes(walls)

    raise ValueError(f"unknown shape {shape!r}")


def merge_meshes(meshes: Sequence[InterfaceMesh]) -> InterfaceMesh:
    """Concatenate meshes into one with distinct component ids."""
    if not meshes:
        raise ValueError("nothing to merge")
    offset, comp_offset = 0, 0
    elements, node_comp = [], []
    for m in meshes:
        elements.append(m.elements + offset)
        node_comp.append(m.node_component + comp_offset)
        offset += m.n_nodes
        comp_offset += m.n_components
    return InterfaceMesh(
        reference=np.concatenate([m.reference for m in meshes]),
        current=np.concatenate([m.current for m in meshes]),
        elements=np.concatenate(elements),
        closed=all(m.closed for m in meshes),
        node_component=np.concatenate(node_comp),
    )


# --- Mesh files ---


def write_mesh(mesh: InterfaceMesh, path: Path) -> None:
    """Write reference nodes and elements as plain text."""
    lines = [str(mesh.n_nodes)]
    lines += [f"{x!r} {y!r}" for x, y in mesh.reference.tolist()]
    lines.append(str(mesh.n_elements))
    lines += [f"{a} {b}" for a, b in mesh.elements.tolist()]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write mesh file {path}: {exc}") from exc


def read_mesh(path: Path) -> InterfaceMesh:
    """Read a mesh file; components are recovered from connectivity."""
    tokens = Path(path).read_text().split("\n")
    rows = [t.split() for t in tokens if t.strip()]
    try:
        n_nodes = int(rows[0][0])
        nodes = np.array([[float(x), float(y)] for x, y in rows[1 : 1 + n_nodes]])
        n_el = int(rows[1 + n_nodes][0])
        elements = np.array([[int(a), int(b)] for a, b in rows[2 + n_nodes : 2 + n_nodes + n_el]], dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed mesh file {path}: {exc}") from exc
    if elements.shape[0] != n_el or nodes.shape[0] != n_nodes:
        raise ValueError(f"malformed mesh file {path}: counts do not match content")

    adjacency = sps.coo_matrix(
        (np.ones(n_el), (elements[:, 0], elements[:, 1])), shape=(n_nodes, n_nodes)
    )
    _, labels = connected_components(adjacency, directed=False)
    degree = np.bincount(elements.ravel(), minlength=n_nodes)
    return InterfaceMesh(
        reference=nodes,
        current=nodes.copy(),
        elements=elements,
        closed=bool(np.all(degree == 2)),
        node_component=labels.astype(np.int64),
    )

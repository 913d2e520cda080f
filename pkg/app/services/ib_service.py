"""Regularized-delta coupling: the conventional immersed boundary baseline.

Forces are spread with the tensor-product hat kernel of width 2h, which on a uniform
lattice is bilinear weighting divided by h^2. Lattice nodes beyond the domain edge
receive nothing, and interpolation treats them as zero, so spreading and
interpolation stay exact adjoints under <F, U> = F^T M U.
"""

import logging
from typing import Optional

import numpy as np

from app.core.exceptions import ProbeOutsideDomainError
from app.services.grid_service import GridSpec, StaggeredState
from app.services.interface_mesh_service import (
    Configuration,
    InterfaceMesh,
    MassSolver,
    element_frames,
    evaluate_on_elements,
    project_l2,
    quadrature_points,
    quadrature_rule,
)

logger = logging.getLogger(__name__)

_LATTICE = {"u": (0.0, 0.5), "v": (0.5, 0.0)}


def _hat_stencil(points: np.ndarray, grid: GridSpec, lattice: str, shape: tuple[int, int]):
    """Four lattice nodes and weights per point; nodes off the lattice get weight 0."""
    ox, oy = _LATTICE[lattice]
    fx = (points[:, 0] - grid.x0) / grid.h - ox
    fy = (points[:, 1] - grid.y0) / grid.h - oy
    i0 = np.floor(fx).astype(np.int64)
    j0 = np.floor(fy).astype(np.int64)
    zeta, lam = fx - i0, fy - j0
    nodes = []
    for di, dj, w in ((0, 0, (1 - zeta) * (1 - lam)), (1, 0, zeta * (1 - lam)), (0, 1, (1 - zeta) * lam), (1, 1, zeta * lam)):
        ii, jj = i0 + di, j0 + dj
        inside = (ii >= 0) & (ii < shape[0]) & (jj >= 0) & (jj < shape[1])
        nodes.append((ii.clip(0, shape[0] - 1), jj.clip(0, shape[1] - 1), np.where(inside, w, 0.0)))
    return nodes


def _check_inside(points: np.ndarray, grid: GridSpec) -> None:
    tol = 1e-12 * grid.h
    outside = (
        (points[:, 0] < grid.x0 - tol)
        | (points[:, 0] > grid.x1 + tol)
        | (points[:, 1] < grid.y0 - tol)
        | (points[:, 1] > grid.y1 + tol)
    )
    if np.any(outside):
        k = int(np.argmax(outside))
        raise ProbeOutsideDomainError(f"interface point ({points[k, 0]:.6g}, {points[k, 1]:.6g}) lies outside the domain")


def ib_spread(mesh: InterfaceMesh, F: np.ndarray, grid: GridSpec, tangential: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Spread the nodal force density F onto the face lattices.

    f(x) = sum_q F(q) w_q delta_h(x - chi(q)), with w_q the reference-length quadrature
    weights. With tangential=True only (I - nn) F is spread.

    Raises:
        ProbeOutsideDomainError: A quadrature point lies outside the domain
    """
    points, weights = quadrature_points(mesh)
    s_q, _ = quadrature_rule()
    F_q = np.stack([evaluate_on_elements(mesh, F, s) for s in s_q], axis=1)
    if tangential:
        n = element_frames(mesh).normal[:, None, :]
        F_q = F_q - np.sum(F_q * n, axis=-1, keepdims=True) * n
    flat = points.reshape(-1, 2)
    _check_inside(flat, grid)
    load = (F_q * weights[..., None]).reshape(-1, 2) / grid.h**2
    out = []
    for comp, (lattice, shape) in enumerate((("u", grid.u_shape), ("v", grid.v_shape))):
        field = np.zeros(shape)
        for ii, jj, w in _hat_stencil(flat, grid, lattice, shape):
            np.add.at(field, (ii, jj), w * load[:, comp])
        out.append(field)
    return out[0], out[1]


def ib_point_interp(state: StaggeredState, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    """Hat-kernel velocity at points, shape (K, 2)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _check_inside(points, grid)
    out = np.zeros_like(points)
    for comp, (lattice, field) in enumerate((("u", state.u), ("v", state.v))):
        for ii, jj, w in _hat_stencil(points, grid, lattice, field.shape):
            out[:, comp] += w * field[ii, jj]
    return out


def ib_interp(
    state: StaggeredState, mesh: InterfaceMesh, grid: GridSpec, solver: Optional[MassSolver] = None
) -> np.ndarray:
    """Nodal velocity: L2 projection of the hat-kernel interpolant at quadrature points."""
    points, _ = quadrature_points(mesh, Configuration.CURRENT)
    values = ib_point_interp(state, grid, points.reshape(-1, 2)).reshape(points.shape)
    return project_l2(mesh, lambda s_q: values, solver)

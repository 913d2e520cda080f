"""Conservative PPM approximation of the convective term u . grad u on the MAC faces.

Each velocity component is advected in flux form over the control volume centred on its
own face. Face states come from piecewise-parabolic reconstruction along grid lines:
monotonized-central slopes, fourth-order edge interpolants, parabola limiting, then
upwinding by the averaged advecting velocity. Advecting velocities are averages of the
neighbouring faces, so a discretely divergence-free field gives the advective form.
"""

import logging

import numpy as np

from app.core.exceptions import ContractViolationError
from app.services.grid_service import GHOST_DEPTH, GhostedState, GridSpec

logger = logging.getLogger(__name__)

# Ghost layers needed by the reconstruction; the outermost is an edge copy
PPM_DEPTH = 3


def _mc_slopes(q: np.ndarray) -> np.ndarray:
    """Monotonized-central slopes along axis 0; NaN at the two ends."""
    d = np.full_like(q, np.nan)
    dl = q[1:-1] - q[:-2]
    dr = q[2:] - q[1:-1]
    dc = 0.5 * (q[2:] - q[:-2])
    lim = np.minimum(np.abs(dc), 2.0 * np.minimum(np.abs(dl), np.abs(dr)))
    d[1:-1] = np.where(dl * dr > 0.0, np.sign(dc) * lim, 0.0)
    return d


def _limited_parabolas(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left and right edge values of the limited parabola in every cell along axis 0."""
    d = _mc_slopes(q)
    edge = q[:-1] + 0.5 * (q[1:] - q[:-1]) - (d[1:] - d[:-1]) / 6.0
    a_l = np.full_like(q, np.nan)
    a_r = np.full_like(q, np.nan)
    a_l[1:-1] = edge[:-1]
    a_r[1:-1] = edge[1:]
    with np.errstate(invalid="ignore"):
        flat = (a_r - q) * (q - a_l) <= 0.0
        a_l = np.where(flat, q, a_l)
        a_r = np.where(flat, q, a_r)
        diff = a_r - a_l
        curv = diff * (q - 0.5 * (a_l + a_r))
        six = diff**2 / 6.0
        over_left = curv > six
        over_right = -six > curv
        a_l, a_r = np.where(over_left, 3.0 * q - 2.0 * a_r, a_l), np.where(over_right, 3.0 * q - 2.0 * a_l, a_r)
    return a_l, a_r


def _upwind_states(q: np.ndarray, vel: np.ndarray) -> np.ndarray:
    """Upwind value at interface k (between cells k and k+1) along axis 0.

    vel has one entry per interface, shape (N-1, ...).
    """
    a_l, a_r = _limited_parabolas(q)
    left = a_r[:-1]
    right = a_l[1:]
    return np.where(vel > 0.0, left, np.where(vel < 0.0, right, 0.5 * (left + right)))


def _advect_component(q3: np.ndarray, cross: np.ndarray, h: float) -> np.ndarray:
    """Flux-form convective term for one component in its own frame.

    Axis 0 of q3 runs along the component's direction; q3 carries PPM_DEPTH ghost layers.
    cross is the other component (GHOST_DEPTH ghosts) in the same frame.
    """
    g3 = PPM_DEPTH
    g = GHOST_DEPTH
    n0 = q3.shape[0] - 2 * g3
    n1 = q3.shape[1] - 2 * g3

    # Fluxes through the cell centres between consecutive faces
    rows = q3[:, g3 : g3 + n1]
    vel = 0.5 * (rows[:-1] + rows[1:])
    flux = vel * _upwind_states(rows, vel)
    along = (flux[g3 : g3 + n0] - flux[g3 - 1 : g3 - 1 + n0]) / h

    # Fluxes through the grid nodes between consecutive faces of one line
    cols = q3[g3 : g3 + n0, :]
    node_vel = 0.5 * (cross[g - 1 : g - 1 + n0, g : g + n1 + 1] + cross[g : g + n0, g : g + n1 + 1])
    vel = np.zeros((n0, cols.shape[1] - 1))
    vel[:, g3 - 1 : g3 + n1] = node_vel
    flux = vel * _upwind_states(cols.T, vel.T).T
    across = (flux[:, g3 : g3 + n1] - flux[:, g3 - 1 : g3 - 1 + n1]) / h
    return along + across


def advect(ghosted: GhostedState, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Approximate (u . grad) u on the u and v faces.

    Args:
        ghosted: Velocity with both ghost layers filled
        grid: Eulerian grid

    Returns:
        (A_u, A_v) with the shapes of u and v

    Raises:
        ContractViolationError: Ghosts missing or input not finite
    """
    if not (np.all(np.isfinite(ghosted.ug)) and np.all(np.isfinite(ghosted.vg))):
        raise ContractViolationError("advection input contains NaN or unfilled ghosts")
    u3 = np.pad(ghosted.ug, 1, mode="edge")
    v3 = np.pad(ghosted.vg, 1, mode="edge")
    a_u = _advect_component(u3, ghosted.vg, grid.h)
    a_v = _advect_component(v3.T, ghosted.ug.T, grid.h).T
    if a_u.shape != grid.u_shape or a_v.shape != grid.v_shape:
        raise ContractViolationError(f"ghosted velocity shapes {ghosted.ug.shape}, {ghosted.vg.shape} do not match grid")
    return a_u, a_v


def cfl_number(u: np.ndarray, v: np.ndarray, dt: float, h: float) -> float:
    """max |u| dt / h over both components."""
    return float(max(np.max(np.abs(u)), np.max(np.abs(v))) * dt / h)

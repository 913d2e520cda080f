"""Projected jump conditions from an interfacial load.

For a load G per unit reference length acting on the interface with unit normal n and
surface jacobian j (reference over current length):

    [p]            = -(G . n) / j
    [mu du/dx_k]   = (I - n n) G / j * n_k      for k = x, y

The densities are discontinuous at nodes (one normal per element). Each Cartesian
component is L2-projected onto the continuous P1 space, giving nodal jump fields.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from app.services.interface_mesh_service import (
    InterfaceMesh,
    MassSolver,
    element_frames,
    eval_shape,
    evaluate_on_elements,
    project_l2,
)

logger = logging.getLogger(__name__)


@dataclass
class JumpField:
    """Nodal jumps: pj (M,), jux = [mu du/dx] (M, 2), juy = [mu du/dy] (M, 2)."""

    pj: np.ndarray
    jux: np.ndarray
    juy: np.ndarray

    @classmethod
    def zeros(cls, n_nodes: int) -> "JumpField":
        return cls(pj=np.zeros(n_nodes), jux=np.zeros((n_nodes, 2)), juy=np.zeros((n_nodes, 2)))

    def scaled(self, factor: float) -> "JumpField":
        return JumpField(pj=factor * self.pj, jux=factor * self.jux, juy=factor * self.juy)

    def pressure_only(self) -> "JumpField":
        return JumpField(pj=self.pj.copy(), jux=np.zeros_like(self.jux), juy=np.zeros_like(self.juy))

    def is_zero(self) -> bool:
        return not (np.any(self.pj) or np.any(self.jux) or np.any(self.juy))


def _check_jacobian(jac: Union[float, np.ndarray]) -> np.ndarray:
    jac = np.asarray(jac, dtype=float)
    if np.any(jac <= 0.0):
        raise ValueError("surface jacobian must be positive")
    return jac


def pressure_jump_density(F: np.ndarray, n: np.ndarray, jac: Union[float, np.ndarray]) -> np.ndarray:
    """-(F . n) / jac; broadcasts over leading axes.

    Raises:
        ValueError: jac <= 0
    """
    jac = _check_jacobian(jac)
    return -np.sum(np.asarray(F) * np.asarray(n), axis=-1) / jac


def velgrad_jump_density(
    F: np.ndarray, n: np.ndarray, jac: Union[float, np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """([mu du/dx], [mu du/dy]) = ((I - nn) F / jac * n_x, (I - nn) F / jac * n_y).

    Raises:
        ValueError: jac <= 0
    """
    jac = _check_jacobian(jac)
    F = np.asarray(F, dtype=float)
    n = np.asarray(n, dtype=float)
    tangential = (F - np.sum(F * n, axis=-1, keepdims=True) * n) / np.expand_dims(jac, -1)
    return tangential * n[..., 0:1], tangential * n[..., 1:2]


def build_jump_field(mesh: InterfaceMesh, F: np.ndarray, solver: Optional[MassSolver] = None) -> JumpField:
    """Project the jump densities of the nodal load F onto nodal jump fields.

    Frames (normal and jacobian) are taken per element from mesh.current.

    Raises:
        ProjectionSolveError: Mass solve failed
    """
    F = np.asarray(F, dtype=float)
    if F.shape != (mesh.n_nodes, 2):
        raise ValueError(f"F has shape {F.shape}, expected ({mesh.n_nodes}, 2)")
    if not np.any(F):
        return JumpField.zeros(mesh.n_nodes)
    frames = element_frames(mesh)
    n = frames.normal[:, None, :]
    jac = frames.jacobian[:, None]

    def densities(s_q: np.ndarray) -> np.ndarray:
        F_q = np.stack([evaluate_on_elements(mesh, F, s) for s in s_q], axis=1)
        pj = pressure_jump_density(F_q, n, jac)
        jux, juy = velgrad_jump_density(F_q, n, jac)
        return np.concatenate([pj[..., None], jux, juy], axis=-1)

    nodal = project_l2(mesh, densities, solver)
    return JumpField(pj=nodal[:, 0], jux=nodal[:, 1:3], juy=nodal[:, 3:5])


def eval_jump_at(
    jumps: JumpField,
    mesh: InterfaceMesh,
    element: Union[int, np.ndarray],
    s: Union[float, np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interpolate nodal jumps to local coordinate s on element(s)."""
    phi = eval_shape(s)
    nodes = mesh.elements[element]
    a, b = nodes[..., 0], nodes[..., 1]
    w0, w1 = phi[..., 0], phi[..., 1]
    pj = w0 * jumps.pj[a] + w1 * jumps.pj[b]
    jux = w0[..., None] * jumps.jux[a] + w1[..., None] * jumps.jux[b]
    juy = w0[..., None] * jumps.juy[a] + w1[..., None] * jumps.juy[b]
    return pj, jux, juy

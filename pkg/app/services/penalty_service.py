"""Prescribed interface kinematics and the spring-damper penalty force.

F = kappa * (xi - chi) + eta * (W - U), with kappa = kappa0 / dt^2.
F is the force the interface exerts on the fluid, per unit reference length.
"""

import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.services.interface_mesh_service import InterfaceMesh


class KinematicsKind(str, Enum):
    """Supported prescribed motions."""
    STATIONARY = "stationary"
    ROTATION = "rotation"
    TRANSLATION = "translation"


class PenaltyParams(BaseModel):
    """Penalty stiffness scale and damping."""

    kappa0: float = Field(gt=0.0)
    eta: float = Field(default=0.0, ge=0.0)

    def kappa(self, dt: float) -> float:
        """Spring stiffness for time step dt."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        return self.kappa0 / dt**2


class KinematicsSpec(BaseModel):
    """Rigid prescribed motion of one interface component (or of all, if component is None)."""

    kind: KinematicsKind = KinematicsKind.STATIONARY
    center: tuple[float, float] = (0.0, 0.0)
    omega: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)
    component: int | None = None

    @model_validator(mode="after")
    def _check_finite(self) -> "KinematicsSpec":
        if not all(math.isfinite(x) for x in (*self.center, self.omega, *self.velocity)):
            raise ValueError("kinematics parameters must be finite")
        return self


def eval_prescribed(kin: KinematicsSpec, X: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Prescribed position xi(X, t) and velocity W(X, t).

    Args:
        kin: Motion description
        X: Reference positions, shape (2,) or (M, 2)
        t: Time, t >= 0

    Returns:
        (xi, W) with the shape of X

    Raises:
        ValueError: t < 0
    """
    if t < 0.0:
        raise ValueError(f"time must be non-negative, got {t}")
    X = np.asarray(X, dtype=float)
    if kin.kind == KinematicsKind.STATIONARY:
        return X.copy(), np.zeros_like(X)
    if kin.kind == KinematicsKind.TRANSLATION:
        vel = np.broadcast_to(np.asarray(kin.velocity), X.shape)
        return X + t * vel, vel.copy()
    c = np.asarray(kin.center)
    angle = kin.omega * t
    cos, sin = math.cos(angle), math.sin(angle)
    rel = X - c
    rx = cos * rel[..., 0] - sin * rel[..., 1]
    ry = sin * rel[..., 0] + cos * rel[..., 1]
    xi = c + np.stack([rx, ry], axis=-1)
    W = kin.omega * np.stack([-ry, rx], axis=-1)
    return xi, W


def prescribed_motion(
    mesh: InterfaceMesh, kinematics: list[KinematicsSpec], t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Nodal xi and W for a mesh whose components may move differently.

    Specs with component=None apply to every node not claimed by a component-specific spec.
    """
    xi, W = eval_prescribed(KinematicsSpec(), mesh.reference, t)
    claimed = np.zeros(mesh.n_nodes, dtype=bool)
    for kin in sorted(kinematics, key=lambda k: k.component is None):
        sel = ~claimed if kin.component is None else (mesh.node_component == kin.component) & ~claimed
        if not np.any(sel):
            continue
        xi[sel], W[sel] = eval_prescribed(kin, mesh.reference[sel], t)
        claimed |= sel
    return xi, W


def compute_penalty_force(
    mesh: InterfaceMesh,
    kinematics: list[KinematicsSpec],
    U: np.ndarray,
    params: PenaltyParams,
    t: float,
    dt: float,
    positions: np.ndarray | None = None,
) -> np.ndarray:
    """Nodal penalty force kappa (xi - chi) + eta (W - U).

    Args:
        mesh: Interface mesh; chi is mesh.current unless positions is given
        kinematics: Prescribed motions
        U: Nodal interface velocity, shape (M, 2)
        params: Stiffness scale and damping
        t: Time at which xi and W are evaluated
        dt: Time step defining kappa = kappa0 / dt^2
        positions: Override for chi (e.g. the midpoint configuration)

    Returns:
        Force per unit reference length, shape (M, 2)
    """
    U = np.asarray(U, dtype=float)
    if U.shape != mesh.reference.shape:
        raise ValueError(f"U has shape {U.shape}, expected {mesh.reference.shape}")
    chi = mesh.current if positions is None else positions
    xi, W = prescribed_motion(mesh, kinematics, t)
    return params.kappa(dt) * (xi - chi) + params.eta * (W - U)

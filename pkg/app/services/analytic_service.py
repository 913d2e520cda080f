"""Closed-form reference solutions for the verification scenarios.

All functions broadcast over array inputs and return (u, v, p). Points where a
reference is undefined (outside the channel for pressure) are NaN.
"""

import math
from enum import Enum
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.core.exceptions import ConfigError


class ReferenceKind(str, Enum):
    """Available analytic references."""
    POISEUILLE = "poiseuille"
    COUETTE = "couette"
    ECCENTRIC = "eccentric"


class PressureGauge(str, Enum):
    """How computed pressures are compared with the reference."""
    ABSOLUTE = "absolute"
    PER_SIDE = "per_side"


class PoiseuilleReference(BaseModel):
    """Plane channel flow driven by p0 at one mouth and -p0 at the other.

    The channel centreline passes through center at the given angle; the
    horizontal case has its lower wall at y = center_y - height / 2.
    """
    kind: Literal["poiseuille"] = "poiseuille"
    p0: float = 0.2
    height: float = Field(default=1.0, gt=0.0)
    length: float = Field(default=5.0, gt=0.0)
    mu: float = Field(default=0.01, gt=0.0)
    angle: float = 0.0
    center: tuple[float, float] = (2.5, 2.5)

    @property
    def gauge(self) -> PressureGauge:
        return PressureGauge.ABSOLUTE

    @property
    def u_max(self) -> float:
        return self.p0 * self.height**2 / (4.0 * self.mu * self.length)


class CouetteReference(BaseModel):
    """Circular Couette flow between concentric cylinders of radii r1 < r2."""
    kind: Literal["couette"] = "couette"
    r1: float = Field(default=0.5, gt=0.0)
    r2: float = Field(default=2.0, gt=0.0)
    omega1: float = 2.0
    omega2: float = -2.0
    center: tuple[float, float] = (0.0, 0.0)
    p0: float = 0.0

    @model_validator(mode="after")
    def _check_radii(self) -> "CouetteReference":
        if self.r2 <= self.r1:
            raise ValueError("outer radius must exceed inner radius")
        return self

    @property
    def gauge(self) -> PressureGauge:
        return PressureGauge.PER_SIDE

    @property
    def coefficients(self) -> tuple[float, float]:
        """(A, B) of the annular solution u_theta = A r + B / r."""
        r1s, r2s = self.r1**2, self.r2**2
        a = (self.omega2 * r2s - self.omega1 * r1s) / (r2s - r1s)
        b = (self.omega1 - self.omega2) * r1s * r2s / (r2s - r1s)
        return a, b


class EccentricReference(BaseModel):
    """Lubrication asymptotics between a rotating inner cylinder at the origin and a
    stationary outer cylinder centred at (e, 0)."""
    kind: Literal["eccentric"] = "eccentric"
    r1: float = Field(default=0.75, gt=0.0)
    r2: float = Field(default=0.75 * (1.0 + 1.0 / 24.0), gt=0.0)
    e: float = 3.0 / 128.0
    omega1: float = 8.33e-4
    mu: float = Field(default=1.0, gt=0.0)
    p0: float = 0.0

    @model_validator(mode="after")
    def _check_radii(self) -> "EccentricReference":
        if self.r2 <= self.r1:
            raise ValueError("outer radius must exceed inner radius")
        return self

    @property
    def gauge(self) -> PressureGauge:
        return PressureGauge.PER_SIDE

    @property
    def thickness(self) -> float:
        return (self.r2 - self.r1) / self.r1

    @property
    def clearance(self) -> float:
        return self.r2 - self.r1


ReferenceSpec = Annotated[
    Union[PoiseuilleReference, CouetteReference, EccentricReference], Field(discriminator="kind")
]


def poiseuille_solution(ref: PoiseuilleReference, x, y, t: float = 0.0):
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    c, s = math.cos(ref.angle), math.sin(ref.angle)
    dx, dy = x - ref.center[0], y - ref.center[1]
    along = c * dx + s * dy + 0.5 * ref.length
    across = -s * dx + c * dy + 0.5 * ref.height
    inside = (across >= 0.0) & (across <= ref.height)
    speed = np.where(inside, ref.p0 * ref.height / (ref.mu * ref.length) * across * (1.0 - across / ref.height), 0.0)
    p = np.where(inside, ref.p0 - 2.0 * ref.p0 * along / ref.length, np.nan)
    return c * speed, s * speed, p


def couette_solution(ref: CouetteReference, x, y, t: float = 0.0):
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    dx, dy = x - ref.center[0], y - ref.center[1]
    r2 = dx**2 + dy**2
    a, b = ref.coefficients
    inner = r2 <= ref.r1**2
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(inner, ref.omega1, a + b / r2)
        p_out = 0.5 * a**2 * r2 - 0.5 * b**2 / r2 + a * b * np.log(r2)
    p = np.where(inner, 0.5 * ref.omega1**2 * r2 + ref.p0, p_out)
    return -dy * rate, dx * rate, p


def eccentric_solution(ref: EccentricReference, x, y, t: float = 0.0):
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    eps, w = ref.thickness, ref.omega1
    r = np.hypot(x, y)
    inner = r < ref.r1
    outside = np.hypot(x - ref.e, y) > ref.r2
    gap = ~inner & ~outside
    gamma = (r**2 - ref.r1 * r) / (ref.r2 - ref.r1 + ref.e * x)
    denom = 2.0 + eps**2
    corr_u = 3.0 * eps * (gamma - gamma**2) * (2.0 * x + 3.0 * eps * r + eps**2 * x) / (denom * (1.0 + eps * x))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr_v = 3.0 * eps * (gamma - gamma**2) * (2.0 * x + 3.0 * eps + eps**2 * x) / (denom * (r + eps * x))
        p_gap = (6.0 * eps * ref.mu * ref.r1 / ref.clearance**2) * (
            (2.0 * y * r**2 + eps * x * y) / (denom * (r**2 + eps * x))
        )
    u = np.where(inner, -w * y, np.where(gap, -w * y * (1.0 - gamma - corr_u), 0.0))
    v = np.where(inner, w * x, np.where(gap, w * x * (1.0 - gamma - corr_v), 0.0))
    p = np.where(inner, 0.5 * w**2 * r**2 + ref.p0, np.where(gap, p_gap, 0.0))
    return u, v, p


_SOLUTIONS = {
    ReferenceKind.POISEUILLE: poiseuille_solution,
    ReferenceKind.COUETTE: couette_solution,
    ReferenceKind.ECCENTRIC: eccentric_solution,
}


def analytic_solution(ref, x, y, t: float = 0.0):
    """Evaluate a reference at points (x, y) and time t.

    Raises:
        ConfigError: Unknown reference kind
    """
    try:
        kind = ReferenceKind(ref.kind)
    except (AttributeError, ValueError) as exc:
        raise ConfigError(f"unknown analytic reference {getattr(ref, 'kind', ref)!r}") from exc
    return _SOLUTIONS[kind](ref, x, y, t)


def reference_field(ref):
    """Callable (x, y, t) -> (u, v, p) for boundary data and initial conditions."""
    if ref is None:
        return None
    return lambda x, y, t: analytic_solution(ref, x, y, t)

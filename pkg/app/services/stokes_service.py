"""Semi-implicit Stokes solve on the MAC grid.

Unknowns are the free velocity faces and every cell pressure. With
A = (rho/dt) I - (mu/2) L the system reads

    [ A   G ] [u]   [r_u]
    [ -D  0 ] [p] = [r_p]

and is solved by restarted GMRES, preconditioned by one pass of an approximate
projection method (direct velocity solve, then a pressure Poisson solve). Boundary
data enters through the affine parts of L, G and D evaluated with zero unknowns.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import LinearOperator, gmres, splu

from app.core.config import settings
from app.core.exceptions import SolverError
from app.services.grid_service import (
    BoundaryConditionSet,
    GridSpec,
    ReferenceField,
    StaggeredState,
    apply_divergence,
    apply_gradient_std,
    apply_laplacian_std,
    apply_normal_bcs,
    assemble_by_probing,
    face_free_masks,
    fill_ghost_bcs,
)

logger = logging.getLogger(__name__)


@dataclass
class StokesResult:
    """Solution plus Krylov statistics."""

    state: StaggeredState
    iterations: int
    residuals: list[float] = field(default_factory=list)


class StokesSystem:
    """Assembled saddle-point operator for fixed grid, boundary kinds, rho, mu and dt."""

    def __init__(
        self,
        grid: GridSpec,
        bcs: BoundaryConditionSet,
        rho: float,
        mu: float,
        dt: float,
        rtol: Optional[float] = None,
        restart: Optional[int] = None,
        max_restarts: Optional[int] = None,
    ):
        if rho <= 0.0 or mu <= 0.0 or dt <= 0.0:
            raise ValueError(f"rho, mu and dt must be positive (got {rho}, {mu}, {dt})")
        self.grid = grid
        self.bcs = bcs
        self.rho = rho
        self.mu = mu
        self.dt = dt
        self.rtol = settings.krylov_rtol if rtol is None else rtol
        self.restart = settings.krylov_restart if restart is None else restart
        self.max_restarts = settings.krylov_max_restarts if max_restarts is None else max_restarts
        self.mask_u, self.mask_v = face_free_masks(grid, bcs)
        self._assemble()

    # --- assembly ---

    def _homogeneous(self, u=None, v=None, p=None):
        g = self.grid
        state = StaggeredState(
            u=np.zeros(g.u_shape) if u is None else u,
            v=np.zeros(g.v_shape) if v is None else v,
            p=np.zeros(g.p_shape) if p is None else p,
        )
        return fill_ghost_bcs(state, self.bcs, 0.0, g, homogeneous=True)

    def _assemble(self) -> None:
        g = self.grid
        iu = np.flatnonzero(self.mask_u.ravel())
        iv = np.flatnonzero(self.mask_v.ravel())
        lap_u = assemble_by_probing(lambda u: apply_laplacian_std(self._homogeneous(u=u).ug, g), g.u_shape, g.u_shape)
        lap_v = assemble_by_probing(lambda v: apply_laplacian_std(self._homogeneous(v=v).vg, g), g.v_shape, g.v_shape)
        grad_x = assemble_by_probing(lambda p: apply_gradient_std(self._homogeneous(p=p).pg, g)[0], g.p_shape, g.u_shape)
        grad_y = assemble_by_probing(lambda p: apply_gradient_std(self._homogeneous(p=p).pg, g)[1], g.p_shape, g.v_shape)
        div_x = assemble_by_probing(
            lambda u: apply_divergence(StaggeredState(u, np.zeros(g.v_shape), np.zeros(g.p_shape)), g), g.u_shape, g.p_shape
        )
        div_y = assemble_by_probing(
            lambda v: apply_divergence(StaggeredState(np.zeros(g.u_shape), v, np.zeros(g.p_shape)), g), g.v_shape, g.p_shape
        )

        scale = self.rho / self.dt
        self.A_u = (scale * sps.identity(iu.size) - 0.5 * self.mu * lap_u[iu][:, iu]).tocsc()
        self.A_v = (scale * sps.identity(iv.size) - 0.5 * self.mu * lap_v[iv][:, iv]).tocsc()
        self.G = sps.vstack([grad_x[iu], grad_y[iv]]).tocsr()
        self.D = sps.hstack([div_x[:, iu], div_y[:, iv]]).tocsr()
        self.A = sps.block_diag([self.A_u, self.A_v]).tocsr()
        self.matrix = sps.bmat([[self.A, self.G], [-self.D, None]]).tocsr()
        self.n_u, self.n_v, self.n_p = iu.size, iv.size, g.nx * g.ny

        self._lu_u = splu(self.A_u)
        self._lu_v = splu(self.A_v)
        poisson = (self.D @ self.G).tolil()
        self.pinned = not self.bcs.has_traction
        if self.pinned:
            poisson[0, :] = 0.0
            poisson[0, 0] = 1.0
        self._lu_p = splu(poisson.tocsc())
        logger.debug(
            "Assembled Stokes system: %d u, %d v, %d p unknowns (pinned=%s)", self.n_u, self.n_v, self.n_p, self.pinned
        )

    # --- helpers ---

    def _poisson(self, rhs: np.ndarray) -> np.ndarray:
        rhs = rhs.copy()
        if self.pinned:
            rhs -= rhs.mean()
            rhs[0] = 0.0
        return self._lu_p.solve(rhs)

    def _velocity(self, r: np.ndarray) -> np.ndarray:
        return np.concatenate([self._lu_u.solve(r[: self.n_u]), self._lu_v.solve(r[self.n_u :])])

    def _precondition(self, r: np.ndarray) -> np.ndarray:
        n = self.n_u + self.n_v
        r_u, r_p = r[:n], r[n:]
        u_tilde = self._velocity(r_u)
        source = r_p + self.D @ u_tilde
        phi = self._poisson(self.rho / self.dt * source)
        u = u_tilde - self.dt / self.rho * (self.G @ phi)
        p = phi - 0.5 * self.mu * source
        return np.concatenate([u, p])

    def boundary_state(self, t: float, reference: Optional[ReferenceField] = None) -> StaggeredState:
        """Zero unknowns with the prescribed boundary-normal faces at time t."""
        return apply_normal_bcs(StaggeredState.zeros(self.grid), self.bcs, t, self.grid, reference)

    def unpack(self, x: np.ndarray, base: StaggeredState) -> StaggeredState:
        out = base.copy()
        out.u[self.mask_u] = x[: self.n_u]
        out.v[self.mask_v] = x[self.n_u : self.n_u + self.n_v]
        out.p = x[self.n_u + self.n_v :].reshape(self.grid.p_shape).copy()
        return out

    def pack(self, state: StaggeredState) -> np.ndarray:
        return np.concatenate([state.u[self.mask_u], state.v[self.mask_v], state.p.ravel()])

    def apply(
        self, state: StaggeredState, t: float, reference: Optional[ReferenceField] = None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rho/dt) u - (mu/2) L u + G p on all faces, and D u, with boundary data at t."""
        ghosted = fill_ghost_bcs(state, self.bcs, t, self.grid, reference)
        fixed = ghosted.interior()
        gx, gy = apply_gradient_std(ghosted.pg, self.grid)
        scale = self.rho / self.dt
        mom_u = scale * fixed.u - 0.5 * self.mu * apply_laplacian_std(ghosted.ug, self.grid) + gx
        mom_v = scale * fixed.v - 0.5 * self.mu * apply_laplacian_std(ghosted.vg, self.grid) + gy
        return mom_u, mom_v, apply_divergence(fixed, self.grid)

    # --- solve ---

    def rhs_vector(
        self, rhs_u: np.ndarray, rhs_v: np.ndarray, t: float, reference: Optional[ReferenceField] = None
    ) -> tuple[np.ndarray, StaggeredState]:
        """Packed right-hand side b of the saddle system and the boundary state it was built on."""
        g = self.grid
        base = self.boundary_state(t, reference)
        ghosted = fill_ghost_bcs(base, self.bcs, t, g, reference)
        gx, gy = apply_gradient_std(ghosted.pg, g)
        aff_u = 0.5 * self.mu * apply_laplacian_std(ghosted.ug, g) - gx
        aff_v = 0.5 * self.mu * apply_laplacian_std(ghosted.vg, g) - gy
        b = np.concatenate(
            [
                (rhs_u + aff_u)[self.mask_u],
                (rhs_v + aff_v)[self.mask_v],
                apply_divergence(base, g).ravel(),
            ]
        )
        return b, base

    def relative_residual(self, x: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(b - self.matrix @ x)) / float(np.linalg.norm(b))

    def solve(
        self,
        rhs_u: np.ndarray,
        rhs_v: np.ndarray,
        t: float,
        reference: Optional[ReferenceField] = None,
        guess: Optional[StaggeredState] = None,
    ) -> StokesResult:
        """Solve for u^{n+1} and p^{n+1/2} given explicit momentum right-hand sides.

        The returned state satisfies ||b - A x|| <= rtol ||b|| for its packed unknowns x,
        measured after the divergence cleanup and pressure pinning.

        Args:
            rhs_u, rhs_v: Right-hand sides on all faces; only free faces are read
            t: Time of the new boundary data
            reference: Analytic field for boundary segments that use it
            guess: Warm start

        Returns:
            StokesResult with boundary faces filled in

        Raises:
            SolverError: Residual above rtol after max_restarts GMRES cycles
        """
        b, base = self.rhs_vector(rhs_u, rhs_v, t, reference)
        if not b.any():
            return StokesResult(state=base, iterations=0)

        size = self.matrix.shape[0]
        precond = LinearOperator((size, size), matvec=self._precondition, dtype=float)
        state = self._finish(self.pack(guess) if guess is not None else np.zeros(size), base)
        x = self.pack(state)
        residual = self.relative_residual(x, b)
        history: list[float] = []
        inner_rtol = self.rtol
        cycle = 0
        while residual > self.rtol:
            if cycle == self.max_restarts:
                raise SolverError(
                    f"Stokes solve did not converge after {self.max_restarts} cycles (residual {residual:.3e})",
                    residuals=history + [residual],
                )
            x, info = gmres(
                self.matrix,
                b,
                x0=x,
                rtol=inner_rtol,
                atol=0.0,
                restart=self.restart,
                maxiter=1,
                M=precond,
                callback=history.append,
                callback_type="pr_norm",
            )
            state = self._finish(x, base)
            x = self.pack(state)
            residual = self.relative_residual(x, b)
            logger.debug("GMRES cycle %d: info=%d, true residual %.3e", cycle, info, residual)
            # the preconditioned stopping test can pass while the true residual does not
            inner_rtol = max(inner_rtol * min(1.0, self.rtol / residual), np.finfo(float).eps * self.rtol)
            cycle += 1

        return StokesResult(state=state, iterations=len(history), residuals=history)

    def _finish(self, x: np.ndarray, base: StaggeredState) -> StaggeredState:
        state = self.unpack(x, base)
        self._clean_divergence(state)
        if self.pinned:
            state.p -= state.p.mean()
        return state

    def _clean_divergence(self, state: StaggeredState) -> None:
        """Remove the remaining discrete divergence with one exact projection."""
        div = apply_divergence(state, self.grid).ravel()
        psi = self._poisson(div)
        correction = self.G @ psi
        state.u[self.mask_u] -= correction[: self.n_u]
        state.v[self.mask_v] -= correction[self.n_u :]
        state.p += (self.rho / self.dt) * psi.reshape(self.grid.p_shape)

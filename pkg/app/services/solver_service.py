"""Time integration of the coupled fluid/interface system.

One step from t^n to t^{n+1}:

1. F^n from the penalty spring at chi^n with the lagged velocity U^{n-1}; restricting
   u^n gives U^n, the predictor chi^ = chi^n + dt U^n and the midpoint chi^{n+1/2}.
2. F^{n+1/2} at chi^{n+1/2} (still damped against U^n) becomes the body force f,
   either through jump corrections or by spreading, depending on the coupling mode.
3. Crank-Nicolson Stokes solve with explicit PPM advection: Adams-Bashforth from the
   second step on, a predictor-corrector pass on the first.
4. chi^{n+1} = chi^n + dt U^{n+1/2}, U^{n+1/2} restricted from (u^{n+1} + u^n) / 2.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from app.core.config import settings
from app.core.exceptions import SolverError
from app.core.prometheus import KRYLOV_ITERATIONS, SOLVER_FAILURES, STEP_DURATION, TIME_STEPS
from app.services.advection_service import advect, cfl_number
from app.services.geometry_service import FluidSide, build_intersections, classify_sides
from app.services.grid_service import (
    BoundaryConditionSet,
    GhostedState,
    GridSpec,
    ReferenceField,
    StaggeredState,
    apply_laplacian_std,
    fill_ghost_bcs,
)
from app.services.ib_service import ib_interp, ib_spread
from app.services.iim_service import assemble_correction_force, lagrangian_traction, restrict_velocity
from app.services.interface_mesh_service import InterfaceMesh, MassSolver, integrate
from app.services.jump_service import JumpField, build_jump_field
from app.services.penalty_service import KinematicsSpec, PenaltyParams, compute_penalty_force
from app.services.stokes_service import StokesSystem

logger = logging.getLogger(__name__)

# Steady when max |u^{n+1} - u^n| / (dt max |u^{n+1}|) falls below this
STEADY_RTOL = 1e-8

# forcing(x, y, t) -> value of one body-force component
ForcingField = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class CouplingMode(str, Enum):
    """How the interface force reaches the fluid and how the interface reads velocity."""
    IB = "ib"
    IIM_STEP1 = "iim_step1"
    IIM_STEP2 = "iim_step2"
    IIM_FULL = "iim_full"


@dataclass
class FlowProblem:
    """Everything a stepper needs besides the evolving state."""

    grid: GridSpec
    bcs: BoundaryConditionSet
    rho: float
    mu: float
    dt: float
    kinematics: list[KinematicsSpec] = field(default_factory=list)
    penalty: PenaltyParams = field(default_factory=lambda: PenaltyParams(kappa0=1e-3))
    mode: CouplingMode = CouplingMode.IIM_FULL
    reference: Optional[ReferenceField] = None
    default_side: FluidSide = FluidSide.PLUS
    forcing: Optional[tuple[ForcingField, ForcingField]] = None


@dataclass
class TimeStepperState:
    """Fields and interface at t^n.

    Attributes:
        state: u^n and p^{n-1/2}
        mesh: Interface with current = chi^n (None for interface-free runs)
        U_prev: U^{n-1}
        advection_prev: A^{n-1}, None before the first step
        force: F^{n-1/2} from the last step
        jumps: Jumps used for the last step's corrections
    """

    state: StaggeredState
    mesh: Optional[InterfaceMesh]
    U_prev: Optional[np.ndarray]
    t: float = 0.0
    step: int = 0
    advection_prev: Optional[tuple[np.ndarray, np.ndarray]] = None
    force: Optional[np.ndarray] = None
    jumps: Optional[JumpField] = None
    krylov_iterations: int = 0

    @classmethod
    def initial(cls, grid: GridSpec, mesh: Optional[InterfaceMesh], state: Optional[StaggeredState] = None) -> "TimeStepperState":
        state = StaggeredState.zeros(grid) if state is None else state.copy()
        state.check(grid)
        U = None if mesh is None else np.zeros_like(mesh.reference)
        return cls(state=state, mesh=mesh, U_prev=U)


@dataclass
class RunResult:
    """Outcome of a time loop."""

    final: TimeStepperState
    steps: int
    steady: bool
    # rows of (t^{n+1/2}, integral of F_x, integral of F_y)
    force_history: list[tuple[float, float, float]] = field(default_factory=list)
    krylov_iterations: list[int] = field(default_factory=list)


class Stepper:
    """Advances TimeStepperState for one FlowProblem in one coupling mode."""

    def __init__(self, problem: FlowProblem, stokes: Optional[StokesSystem] = None):
        self.problem = problem
        self.stokes = stokes or StokesSystem(problem.grid, problem.bcs, problem.rho, problem.mu, problem.dt)
        self._mass: Optional[MassSolver] = None
        self._cfl_warned = False

    @property
    def mode(self) -> CouplingMode:
        return self.problem.mode

    def with_mode(self, mode: CouplingMode) -> "Stepper":
        """Same problem and assembled Stokes system, different coupling mode."""
        other = Stepper(replace(self.problem, mode=CouplingMode(mode)), self.stokes)
        other._mass = self._mass
        return other

    def _mass_solver(self, mesh: InterfaceMesh) -> MassSolver:
        # mass matrix is over the reference configuration
        if self._mass is None:
            self._mass = MassSolver(mesh)
        return self._mass

    # --- interface coupling ---

    def _ghosts(self, state: StaggeredState, t: float) -> GhostedState:
        pb = self.problem
        return fill_ghost_bcs(state, pb.bcs, t, pb.grid, pb.reference)

    def _restrict(self, ghosted: GhostedState, mesh: InterfaceMesh, F: np.ndarray, intersections=None) -> np.ndarray:
        pb = self.problem
        solver = self._mass_solver(mesh)
        if pb.mode != CouplingMode.IIM_FULL:
            return ib_interp(ghosted.interior(), mesh, pb.grid, solver)
        if intersections is None:
            intersections = build_intersections(mesh, pb.grid)
        sides = classify_sides(intersections, pb.grid, pb.default_side)
        jumps = build_jump_field(mesh, -F, solver)
        return restrict_velocity(ghosted, mesh, pb.grid, sides, jumps, pb.mu, solver)

    def _body_force(self, mesh: InterfaceMesh, F: np.ndarray, intersections) -> tuple[np.ndarray, np.ndarray, JumpField]:
        pb = self.problem
        if pb.mode == CouplingMode.IB:
            fx, fy = ib_spread(mesh, F, pb.grid)
            return fx, fy, JumpField.zeros(mesh.n_nodes)
        jumps = build_jump_field(mesh, -F, self._mass_solver(mesh))
        free = (self.stokes.mask_u, self.stokes.mask_v)
        if pb.mode == CouplingMode.IIM_STEP1:
            jumps = jumps.pressure_only()
            fx, fy, _ = assemble_correction_force(intersections, jumps, mesh, pb.grid, free, viscous=False)
            tx, ty = ib_spread(mesh, F, pb.grid, tangential=True)
            return fx + tx, fy + ty, jumps
        fx, fy, _ = assemble_correction_force(intersections, jumps, mesh, pb.grid, free, viscous=True)
        return fx, fy, jumps

    def interface_velocity(self, st: TimeStepperState) -> np.ndarray:
        """Restricted interface velocity at t^n, using the last step's force for the jumps."""
        if st.mesh is None:
            raise ValueError("state has no interface")
        F = st.force if st.force is not None else np.zeros_like(st.mesh.current)
        return self._restrict(self._ghosts(st.state, st.t), st.mesh, F)

    def interface_traction(self, st: TimeStepperState, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nodal exterior pressure and wall shear stress at t^n."""
        if st.mesh is None:
            raise ValueError("state has no interface")
        solver = self._mass_solver(st.mesh)
        F = st.force if st.force is not None else np.zeros_like(st.mesh.current)
        jumps = build_jump_field(st.mesh, -F, solver)
        return lagrangian_traction(self._ghosts(st.state, st.t), st.mesh, self.problem.grid, jumps, U, self.problem.mu, solver)

    # --- stepping ---

    def _check_cfl(self, state: StaggeredState) -> float:
        pb = self.problem
        cfl = cfl_number(state.u, state.v, pb.dt, pb.grid.h)
        if cfl > settings.cfl_max:
            SOLVER_FAILURES.inc()
            raise SolverError(f"CFL number {cfl:.3f} exceeds {settings.cfl_max}")
        if cfl > settings.cfl_warn and not self._cfl_warned:
            logger.warning("CFL number %.3f above %.2f; results may lose accuracy", cfl, settings.cfl_warn)
            self._cfl_warned = True
        return cfl

    def _forcing(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        pb = self.problem
        if pb.forcing is None:
            return np.zeros(pb.grid.u_shape), np.zeros(pb.grid.v_shape)
        fu, fv = pb.forcing
        return fu(*pb.grid.u_points(), t), fv(*pb.grid.v_points(), t)

    def _solve(self, base_u, base_v, advection, force, t_new, guess):
        pb = self.problem
        rhs_u = base_u - pb.rho * advection[0] + force[0]
        rhs_v = base_v - pb.rho * advection[1] + force[1]
        try:
            result = self.stokes.solve(rhs_u, rhs_v, t_new, pb.reference, guess)
        except SolverError:
            SOLVER_FAILURES.inc()
            raise
        KRYLOV_ITERATIONS.observe(result.iterations)
        return result

    def _advance(self, st: TimeStepperState, predictor: bool) -> TimeStepperState:
        pb = self.problem
        grid, dt = pb.grid, pb.dt
        started = time.perf_counter()
        self._check_cfl(st.state)
        t_n = st.t
        t_half = t_n + 0.5 * dt
        t_new = t_n + dt
        ghost_n = self._ghosts(st.state, t_n)

        fx = np.zeros(grid.u_shape)
        fy = np.zeros(grid.v_shape)
        mesh_half = None
        intersections = None
        F_half = None
        jumps = None
        U_n = None
        if st.mesh is not None:
            mesh_n = st.mesh
            F_n = compute_penalty_force(mesh_n, pb.kinematics, st.U_prev, pb.penalty, t_n, dt)
            U_n = self._restrict(ghost_n, mesh_n, F_n)
            chi_hat = mesh_n.current + dt * U_n
            mesh_half = mesh_n.with_current(0.5 * (chi_hat + mesh_n.current))
            F_half = compute_penalty_force(mesh_half, pb.kinematics, U_n, pb.penalty, t_half, dt)
            if pb.mode != CouplingMode.IB:
                intersections = build_intersections(mesh_half, grid)
            fx, fy, jumps = self._body_force(mesh_half, F_half, intersections)

        ex_u, ex_v = self._forcing(t_half)
        force = (fx + ex_u, fy + ex_v)
        scale = pb.rho / dt
        interior = ghost_n.interior()
        base_u = scale * interior.u + 0.5 * pb.mu * apply_laplacian_std(ghost_n.ug, grid)
        base_v = scale * interior.v + 0.5 * pb.mu * apply_laplacian_std(ghost_n.vg, grid)

        a_n = advect(ghost_n, grid)
        iterations = 0
        if predictor:
            first = self._solve(base_u, base_v, a_n, force, t_new, st.state)
            iterations += first.iterations
            a_star = advect(self._ghosts(first.state, t_new), grid)
            a_half = (0.5 * (a_n[0] + a_star[0]), 0.5 * (a_n[1] + a_star[1]))
            guess = first.state
        else:
            a_prev = st.advection_prev
            a_half = (1.5 * a_n[0] - 0.5 * a_prev[0], 1.5 * a_n[1] - 0.5 * a_prev[1])
            guess = st.state
        result = self._solve(base_u, base_v, a_half, force, t_new, guess)
        iterations += result.iterations
        new_state = result.state
        if not (np.all(np.isfinite(new_state.u)) and np.all(np.isfinite(new_state.v)) and np.all(np.isfinite(new_state.p))):
            SOLVER_FAILURES.inc()
            raise SolverError(f"non-finite velocity or pressure at t={t_new:.6g}")

        new_mesh = None
        if st.mesh is not None:
            ghost_new = self._ghosts(new_state, t_new)
            ghost_mid = GhostedState(
                ug=0.5 * (ghost_new.ug + ghost_n.ug),
                vg=0.5 * (ghost_new.vg + ghost_n.vg),
                pg=0.5 * (ghost_new.pg + ghost_n.pg),
            )
            U_half = self._restrict(ghost_mid, mesh_half, F_half, intersections)
            new_mesh = st.mesh.with_current(st.mesh.current + dt * U_half)

        TIME_STEPS.inc()
        STEP_DURATION.observe(time.perf_counter() - started)
        return TimeStepperState(
            state=new_state,
            mesh=new_mesh,
            U_prev=U_n,
            t=t_new,
            step=st.step + 1,
            advection_prev=a_n,
            force=F_half,
            jumps=jumps,
            krylov_iterations=iterations,
        )

    def initial_step(self, st: TimeStepperState) -> TimeStepperState:
        """First step: forward-Euler advection predictor, then the averaged corrector.

        Raises:
            ValueError: st is not at step 0
        """
        if st.step != 0:
            raise ValueError(f"initial_step called at step {st.step}")
        return self._advance(st, predictor=True)

    def step(self, st: TimeStepperState) -> TimeStepperState:
        """Advance one step; delegates to initial_step while no advection history exists."""
        if st.advection_prev is None:
            return self.initial_step(st)
        return self._advance(st, predictor=False)

    def run(
        self,
        st: TimeStepperState,
        end_time: Optional[float] = None,
        max_steps: Optional[int] = None,
        steady: bool = False,
        log_interval: int = 50,
    ) -> RunResult:
        """Step until end_time, max_steps or (with steady=True) a steady state.

        Raises:
            ValueError: No stopping criterion given
            SolverError: Propagated from a step
        """
        if end_time is None and max_steps is None and not steady:
            raise ValueError("run needs end_time, max_steps or steady=True")
        dt = self.problem.dt
        history: list[tuple[float, float, float]] = []
        iterations: list[int] = []
        n = 0
        is_steady = False
        while True:
            if max_steps is not None and n >= max_steps:
                break
            if end_time is not None and st.t + 0.5 * dt > end_time:
                break
            previous = st.state
            st = self.step(st)
            n += 1
            iterations.append(st.krylov_iterations)
            if st.force is not None:
                total = integrate(st.mesh, st.force)
                history.append((st.t - 0.5 * dt, float(total[0]), float(total[1])))
            change = max(np.max(np.abs(st.state.u - previous.u)), np.max(np.abs(st.state.v - previous.v)))
            size = max(np.max(np.abs(st.state.u)), np.max(np.abs(st.state.v)), 1e-300)
            rate = change / (dt * size)
            if log_interval and st.step % log_interval == 0:
                drift = 0.0 if st.mesh is None else float(np.max(np.abs(st.mesh.current - st.mesh.reference)))
                logger.info(
                    "step=%d t=%.5g cfl=%.3f krylov=%d rate=%.3e max_disp=%.3e",
                    st.step,
                    st.t,
                    cfl_number(st.state.u, st.state.v, dt, self.problem.grid.h),
                    st.krylov_iterations,
                    rate,
                    drift,
                )
            if steady and rate < STEADY_RTOL:
                is_steady = True
                logger.info("Reached steady state at step %d (t=%.5g)", st.step, st.t)
                break
        return RunResult(final=st, steps=n, steady=is_steady, force_history=history, krylov_iterations=iterations)


def set_coupling_mode(problem: FlowProblem, mode: CouplingMode) -> Stepper:
    """Stepper configured for one coupling mode."""
    return Stepper(replace(problem, mode=CouplingMode(mode)))

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.exceptions import SolverError
from app.services.grid_service import (
    BoundaryConditionSet,
    BoundaryKind,
    BoundarySegment,
    GridSpec,
    StaggeredState,
    apply_divergence,
)
from app.services.interface_mesh_service import CircleShape, generate_mesh
from app.services.penalty_service import KinematicsKind, KinematicsSpec, PenaltyParams
from app.services.solver_service import CouplingMode, FlowProblem, Stepper, TimeStepperState, set_coupling_mode

BODY_FORCE = 1.0
MU = 1.0


@pytest.fixture
def channel():
    wall = [BoundarySegment(kind=BoundaryKind.VELOCITY)]
    mouth = [BoundarySegment(kind=BoundaryKind.TRACTION)]
    return BoundaryConditionSet(west=mouth, east=mouth, south=wall, north=wall)


@pytest.fixture
def forced_channel(grid8, channel):
    return FlowProblem(
        grid=grid8,
        bcs=channel,
        rho=1.0,
        mu=MU,
        dt=0.01,
        forcing=(lambda x, y, t: BODY_FORCE + 0.0 * x, lambda x, y, t: 0.0 * x),
    )


def _discrete_poiseuille(grid):
    # exact steady state of the five-point scheme with reflected wall ghosts
    c = BODY_FORCE / (2.0 * MU)
    y = grid.u_points()[1]
    return StaggeredState(u=c * (y * (1.0 - y) + grid.h**2 / 4.0), v=np.zeros(grid.v_shape), p=np.zeros(grid.p_shape))


@pytest.fixture
def box16():
    return GridSpec.from_extent((-1.0, -1.0), (2.0, 2.0), 16)


class TestInterfaceFreeFlow:
    def test_body_forced_channel_is_preserved(self, forced_channel, grid8):
        exact = _discrete_poiseuille(grid8)
        stepper = Stepper(forced_channel)
        result = stepper.run(TimeStepperState.initial(grid8, None, exact), max_steps=5)
        assert result.steps == 5
        assert result.final.step == 5
        assert result.final.t == pytest.approx(0.05)
        assert_allclose(result.final.state.u, exact.u, atol=1e-9)
        assert_allclose(result.final.state.v, 0.0, atol=1e-9)
        assert_allclose(result.final.state.p, 0.0, atol=1e-8)
        assert result.force_history == []

    @pytest.mark.slow
    def test_channel_spins_up_from_rest(self, forced_channel, grid8):
        result = Stepper(forced_channel).run(TimeStepperState.initial(grid8, None), max_steps=300)
        assert_allclose(result.final.state.u, _discrete_poiseuille(grid8).u, rtol=1e-5, atol=1e-7)
        assert np.abs(apply_divergence(result.final.state, grid8)).max() < 1e-9

    def test_end_time_stops_the_loop(self, forced_channel, grid8):
        result = Stepper(forced_channel).run(TimeStepperState.initial(grid8, None), end_time=0.03)
        assert result.steps == 3
        assert len(result.krylov_iterations) == 3

    def test_run_needs_a_stopping_criterion(self, forced_channel, grid8):
        with pytest.raises(ValueError):
            Stepper(forced_channel).run(TimeStepperState.initial(grid8, None))

    def test_initial_step_only_at_step_zero(self, forced_channel, grid8):
        st = replace(TimeStepperState.initial(grid8, None), step=1)
        with pytest.raises(ValueError):
            Stepper(forced_channel).initial_step(st)

    def test_cfl_limit(self, forced_channel, grid8):
        fast = StaggeredState.zeros(grid8)
        fast.u[:] = 100.0
        with pytest.raises(SolverError):
            Stepper(forced_channel).step(TimeStepperState.initial(grid8, None, fast))

    def test_interface_queries_need_a_mesh(self, forced_channel, grid8):
        with pytest.raises(ValueError):
            Stepper(forced_channel).interface_velocity(TimeStepperState.initial(grid8, None))


class TestCoupledFlow:
    @pytest.mark.parametrize("mode", list(CouplingMode))
    def test_resting_interface_leaves_fluid_at_rest(self, box16, walls, mode):
        mesh = generate_mesh(CircleShape(center=(0.0, 0.0), radius=0.4), m_fac=2.0, h=box16.h)
        problem = FlowProblem(grid=box16, bcs=walls, rho=1.0, mu=0.1, dt=0.1 * box16.h, kinematics=[KinematicsSpec()], mode=mode)
        result = Stepper(problem).run(TimeStepperState.initial(box16, mesh), max_steps=2)
        assert not result.final.state.u.any()
        assert not result.final.state.v.any()
        assert_allclose(result.final.mesh.current, mesh.reference)
        assert len(result.force_history) == 2
        assert result.force_history[-1][1:] == (0.0, 0.0)

    def test_with_mode_shares_the_stokes_system(self, box16, walls):
        problem = FlowProblem(grid=box16, bcs=walls, rho=1.0, mu=0.1, dt=0.01)
        stepper = Stepper(problem)
        other = stepper.with_mode(CouplingMode.IB)
        assert other.mode == CouplingMode.IB
        assert other.stokes is stepper.stokes
        assert set_coupling_mode(problem, "iim_step1").mode == CouplingMode.IIM_STEP1

    @pytest.mark.slow
    def test_rotating_cylinder_drags_fluid(self, box16, walls):
        mesh = generate_mesh(CircleShape(center=(0.0, 0.0), radius=0.4), m_fac=2.0, h=box16.h)
        problem = FlowProblem(
            grid=box16,
            bcs=walls,
            rho=1.0,
            mu=0.1,
            dt=0.1 * box16.h,
            kinematics=[KinematicsSpec(kind=KinematicsKind.ROTATION, omega=1.0)],
            penalty=PenaltyParams(kappa0=1e-3),
        )
        stepper = Stepper(problem)
        result = stepper.run(TimeStepperState.initial(box16, mesh), max_steps=20)
        final = result.final
        assert np.all(np.isfinite(final.state.u))
        assert np.abs(final.state.u).max() > 1e-3
        assert np.abs(apply_divergence(final.state, box16)).max() < 1e-8
        U = stepper.interface_velocity(final)
        assert U.shape == mesh.reference.shape
        p_plus, wss = stepper.interface_traction(final, U)
        assert p_plus.shape == (mesh.n_nodes,)
        assert wss.shape == (mesh.n_nodes, 2)
        assert np.all(np.isfinite(wss))

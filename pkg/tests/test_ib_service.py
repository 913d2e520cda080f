import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.exceptions import ProbeOutsideDomainError
from app.services.grid_service import GridSpec, StaggeredState
from app.services.ib_service import ib_interp, ib_point_interp, ib_spread
from app.services.interface_mesh_service import (
    CircleShape,
    assemble_mass_matrix,
    element_frames,
    generate_mesh,
    integrate,
)


@pytest.fixture
def grid():
    return GridSpec.from_extent((0.0, 0.0), (1.0, 1.0), 16)


@pytest.fixture
def ring():
    return generate_mesh(CircleShape(center=(0.47, 0.52), radius=0.25), n_elements=48)


def test_spread_and_interp_are_adjoint(grid, ring, rng):
    F = rng.standard_normal((ring.n_nodes, 2))
    state = StaggeredState(u=rng.standard_normal(grid.u_shape), v=rng.standard_normal(grid.v_shape), p=np.zeros(grid.p_shape))
    fu, fv = ib_spread(ring, F, grid)
    eulerian = grid.h**2 * (np.sum(fu * state.u) + np.sum(fv * state.v))
    U = ib_interp(state, ring, grid)
    lagrangian = np.sum(F * (assemble_mass_matrix(ring) @ U))
    assert eulerian == pytest.approx(lagrangian, rel=1e-8)


def test_spreading_conserves_total_force(grid, ring):
    F = np.tile([1.5, -0.5], (ring.n_nodes, 1))
    fu, fv = ib_spread(ring, F, grid)
    total = integrate(ring, F)
    assert grid.h**2 * fu.sum() == pytest.approx(total[0])
    assert grid.h**2 * fv.sum() == pytest.approx(total[1])


def test_tangential_spreading_drops_normal_load(grid, ring):
    normal = np.zeros((ring.n_nodes, 2))
    frames = element_frames(ring)
    for e, (a, b) in enumerate(ring.elements):
        normal[a] += 0.5 * frames.normal[e]
        normal[b] += 0.5 * frames.normal[e]
    fu, fv = ib_spread(ring, normal, grid, tangential=True)
    full_u, _ = ib_spread(ring, normal, grid)
    assert np.abs(fu).max() < 0.1 * np.abs(full_u).max()


def test_uniform_flow_is_interpolated_exactly(grid, ring):
    state = StaggeredState(u=np.full(grid.u_shape, 2.0), v=np.full(grid.v_shape, -1.0), p=np.zeros(grid.p_shape))
    assert_allclose(ib_point_interp(state, grid, np.array([[0.4, 0.6]])), [[2.0, -1.0]])
    assert_allclose(ib_interp(state, ring, grid), np.tile([2.0, -1.0], (ring.n_nodes, 1)), atol=1e-9)


def test_points_outside_domain(grid):
    state = StaggeredState.zeros(grid)
    with pytest.raises(ProbeOutsideDomainError):
        ib_point_interp(state, grid, np.array([[1.2, 0.5]]))
    escaped = generate_mesh(CircleShape(center=(0.9, 0.5), radius=0.3), n_elements=16)
    with pytest.raises(ProbeOutsideDomainError):
        ib_spread(escaped, np.ones((16, 2)), grid)

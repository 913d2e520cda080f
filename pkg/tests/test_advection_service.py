import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.exceptions import ContractViolationError
from app.services.advection_service import advect, cfl_number
from app.services.grid_service import GHOST_DEPTH, GhostedState, GridSpec


def _ghosted(grid, fu, fv):
    g = GHOST_DEPTH
    h = grid.h

    def lattice(nx, ny, ox, oy, f):
        x, y = np.meshgrid(
            grid.x0 + (np.arange(-g, nx + g) + ox) * h, grid.y0 + (np.arange(-g, ny + g) + oy) * h, indexing="ij"
        )
        return f(x, y)

    return GhostedState(
        ug=lattice(grid.nx + 1, grid.ny, 0.0, 0.5, fu),
        vg=lattice(grid.nx, grid.ny + 1, 0.5, 0.0, fv),
        pg=np.zeros((grid.nx + 2 * g, grid.ny + 2 * g)),
    )


@pytest.fixture
def grid():
    return GridSpec.from_extent((-1.0, -1.0), (2.0, 2.0), 12)


def test_uniform_flow_has_no_convection(grid):
    a_u, a_v = advect(_ghosted(grid, lambda x, y: 0 * x + 0.3, lambda x, y: 0 * x - 1.1), grid)
    assert_allclose(a_u, 0.0, atol=1e-14)
    assert_allclose(a_v, 0.0, atol=1e-14)


def test_straining_flow_is_exact(grid):
    # u = (x, -y): (u . grad) u = (x, y)
    a_u, a_v = advect(_ghosted(grid, lambda x, y: x, lambda x, y: -y), grid)
    assert a_u.shape == grid.u_shape
    assert a_v.shape == grid.v_shape
    assert_allclose(a_u, grid.u_points()[0], atol=1e-10)
    assert_allclose(a_v, grid.v_points()[1], atol=1e-10)


def test_shear_flow_is_not_self_advected(grid):
    a_u, a_v = advect(_ghosted(grid, lambda x, y: y, lambda x, y: 0 * x), grid)
    assert_allclose(a_u, 0.0, atol=1e-12)
    assert_allclose(a_v, 0.0, atol=1e-12)


def test_step_only_disturbs_nearby_faces(grid):
    a_u, _ = advect(_ghosted(grid, lambda x, y: np.where(x > 0.1, 0.0, 1.0), lambda x, y: 0 * x), grid)
    assert np.all(np.isfinite(a_u))
    far = np.abs(grid.u_points()[0] - 0.1) > 0.75
    assert_allclose(a_u[far], 0.0, atol=1e-12)


def test_unfilled_ghosts_rejected(grid):
    ghosted = _ghosted(grid, lambda x, y: x, lambda x, y: -y)
    ghosted.ug[0, 0] = np.nan
    with pytest.raises(ContractViolationError):
        advect(ghosted, grid)


def test_cfl_number():
    u = np.array([[0.5, -2.0]])
    v = np.array([[1.0]])
    assert cfl_number(u, v, 0.01, 0.1) == pytest.approx(0.2)

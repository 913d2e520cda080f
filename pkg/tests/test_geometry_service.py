import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.services.geometry_service import (
    SQRT_EPS,
    Axis,
    FluidSide,
    LineKind,
    SideMap,
    StencilFamily,
    build_intersections,
    classify_sides,
    intersect_segment_gridline,
    perturb_nodes,
)
from app.services.grid_service import GridSpec
from app.services.interface_mesh_service import CircleShape, Orientation, generate_mesh


@pytest.fixture
def grid16():
    return GridSpec.from_extent((0.0, 0.0), (1.0, 1.0), 16)


@pytest.fixture
def disc():
    return generate_mesh(CircleShape(center=(0.5, 0.5), radius=0.3), n_elements=40)


class TestSegmentCrossing:
    def test_vertical_line(self):
        point, s = intersect_segment_gridline(np.array([0.0, 0.0]), np.array([1.0, 1.0]), Axis.Y, 0.25)
        assert_allclose(point, [0.25, 0.25])
        assert s == pytest.approx(0.25)

    def test_horizontal_line(self):
        point, s = intersect_segment_gridline(np.array([0.0, 1.0]), np.array([2.0, 0.0]), Axis.X, 0.5)
        assert_allclose(point, [1.0, 0.5])
        assert s == pytest.approx(0.5)

    def test_no_crossing(self):
        assert intersect_segment_gridline(np.array([0.0, 0.0]), np.array([0.2, 0.1]), Axis.Y, 0.5) is None

    def test_touching_is_not_a_crossing(self):
        assert intersect_segment_gridline(np.array([0.5, 0.0]), np.array([0.7, 1.0]), Axis.Y, 0.5) is None

    def test_degenerate_segment(self):
        with pytest.raises(ValueError):
            intersect_segment_gridline(np.ones(2), np.ones(2), Axis.X, 0.0)


class TestPerturbation:
    def test_nodes_leave_half_grid_lines(self, grid16):
        nodes = np.array([[0.5, 0.25], [0.3, 0.7]])
        moved = perturb_nodes(nodes, grid16)
        shift = 2.0 * SQRT_EPS * grid16.h
        assert_allclose(moved[0], [0.5 + shift, 0.25 + shift], rtol=0, atol=1e-15)
        assert_allclose(moved[1], nodes[1], rtol=0, atol=0)

    def test_boundary_nodes_move_outward(self, grid16):
        moved = perturb_nodes(np.array([[0.0, 1.0]]), grid16)
        assert moved[0, 0] < 0.0
        assert moved[0, 1] > 1.0

    def test_input_untouched(self, grid16):
        nodes = np.array([[0.5, 0.5]])
        perturb_nodes(nodes, grid16)
        assert nodes[0, 0] == 0.5


class TestIntersections:
    def test_rows_cross_circle_twice_with_opposite_signs(self, disc, grid16):
        rows = build_intersections(disc, grid16).lines[LineKind.CELL_ROWS]
        for line in np.unique(rows.line):
            on_line = rows.line == line
            # sorted by coordinate: enter through the left half, leave through the right
            np.testing.assert_array_equal(rows.sign[on_line], [-1, 1])
        y = grid16.y0 + (rows.line + 0.5) * grid16.h
        assert_allclose(rows.point[:, 1], y)
        crossed = np.abs(grid16.y0 + (np.arange(grid16.ny) + 0.5) * grid16.h - 0.5) < 0.29
        assert np.all(np.isin(np.flatnonzero(crossed), rows.line))

    def test_family_distances_lie_within_a_cell(self, disc, grid16):
        intersections = build_intersections(disc, grid16)
        for family in StencilFamily:
            fam = intersections.families[family]
            assert np.all(fam.d_plus[fam.valid] >= 0.0)
            assert np.all(fam.d_plus[fam.valid] <= grid16.h)
        assert intersections.count > 0

    def test_records_straddle_the_crossing(self, disc, grid16):
        records = build_intersections(disc, grid16).records(StencilFamily.GRADIENT_X)
        for rec in records:
            assert rec.upper == rec.lower + 1
            x_lower = grid16.x0 + (rec.lower + 0.5) * grid16.h
            assert x_lower < rec.point[0] < x_lower + grid16.h


class TestSideClassification:
    def test_disc_interior_is_minus(self, disc, grid16):
        sides = classify_sides(build_intersections(disc, grid16), grid16)
        for arr, (x, y) in ((sides.p, grid16.p_points()), (sides.u, grid16.u_points()), (sides.v, grid16.v_points())):
            r = np.hypot(x - 0.5, y - 0.5)
            assert np.all(arr[r < 0.3 - grid16.h] == FluidSide.MINUS)
            assert np.all(arr[r > 0.3 + grid16.h] == FluidSide.PLUS)

    def test_clockwise_circle_flips_sides(self, grid16):
        mesh = generate_mesh(CircleShape(center=(0.5, 0.5), radius=0.3, orientation=Orientation.CW), n_elements=40)
        sides = classify_sides(build_intersections(mesh, grid16), grid16)
        assert sides.p[8, 8] == FluidSide.PLUS
        assert sides.p[0, 0] == FluidSide.MINUS

    def test_untouched_grid_takes_default(self, grid16):
        mesh = generate_mesh(CircleShape(center=(0.5, 0.5), radius=0.01), n_elements=8)
        sides = classify_sides(build_intersections(mesh, grid16), grid16, default=FluidSide.MINUS)
        np.testing.assert_array_equal(sides.p, SideMap.uniform(grid16, FluidSide.MINUS).p)

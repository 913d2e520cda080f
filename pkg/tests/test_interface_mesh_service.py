import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.exceptions import DegenerateElementError
from app.services.interface_mesh_service import (
    ChannelWallsShape,
    CircleShape,
    Configuration,
    LineShape,
    MassSolver,
    Orientation,
    assemble_load,
    assemble_mass_matrix,
    element_frame,
    element_frames,
    eval_shape,
    evaluate_on_elements,
    generate_mesh,
    integrate,
    merge_meshes,
    project_l2,
    quadrature_rule,
    read_mesh,
    write_mesh,
)


@pytest.fixture
def circle():
    return generate_mesh(CircleShape(center=(0.3, -0.2), radius=0.5), n_elements=40)


def _nodal_to_quadrature(mesh, nodal):
    return lambda s_q: np.stack([evaluate_on_elements(mesh, nodal, s) for s in s_q], axis=1)


class TestShapes:
    def test_eval_shape(self):
        assert_allclose(eval_shape(0.25), [0.75, 0.25])
        with pytest.raises(ValueError):
            eval_shape(1.5)

    def test_quadrature_integrates_quintics(self):
        s, w = quadrature_rule()
        assert w.sum() == pytest.approx(1.0)
        assert np.sum(w * s**5) == pytest.approx(1.0 / 6.0)


class TestGenerators:
    def test_ccw_circle_has_outward_normals(self, circle):
        frames = element_frames(circle)
        mid = 0.5 * (circle.current[circle.elements[:, 0]] + circle.current[circle.elements[:, 1]])
        radial = mid - np.array([0.3, -0.2])
        assert np.all(np.sum(frames.normal * radial, axis=1) > 0.0)
        assert circle.closed

    def test_cw_circle_has_inward_normals(self):
        mesh = generate_mesh(CircleShape(center=(0.0, 0.0), radius=1.0, orientation=Orientation.CW), n_elements=12)
        frames = element_frames(mesh)
        mid = 0.5 * (mesh.current[mesh.elements[:, 0]] + mesh.current[mesh.elements[:, 1]])
        assert np.all(np.sum(frames.normal * mid, axis=1) < 0.0)

    def test_element_count_from_grid_spacing(self):
        mesh = generate_mesh(CircleShape(center=(0.0, 0.0), radius=0.5), m_fac=2.0, h=0.1)
        assert mesh.n_elements == round(math.pi / 0.2)

    def test_open_line(self):
        mesh = generate_mesh(LineShape(p0=(0.0, 0.0), p1=(1.0, 0.0)), n_elements=4)
        assert mesh.n_nodes == 5
        assert not mesh.closed
        assert_allclose(element_frames(mesh).normal, np.tile([0.0, -1.0], (4, 1)))

    def test_degenerate_shapes(self):
        with pytest.raises(DegenerateElementError):
            generate_mesh(LineShape(p0=(1.0, 1.0), p1=(1.0, 1.0)), n_elements=3)
        with pytest.raises(DegenerateElementError):
            generate_mesh(CircleShape(center=(0.0, 0.0), radius=1.0), n_elements=2)

    def test_channel_walls_face_each_other(self):
        mesh = generate_mesh(
            ChannelWallsShape(center=(2.5, 2.5), height=1.0, bounds=(0.0, 0.0, 5.0, 5.0)), n_elements=10
        )
        assert mesh.n_components == 2
        frames = element_frames(mesh)
        lower = mesh.element_component == 0
        assert_allclose(frames.normal[lower], np.tile([0.0, 1.0], (10, 1)), atol=1e-14)
        assert_allclose(frames.normal[~lower], np.tile([0.0, -1.0], (10, 1)), atol=1e-14)
        assert_allclose(mesh.reference[mesh.node_component == 0, 1], 2.0)
        assert mesh.reference[:, 0].min() == 0.0
        assert mesh.reference[:, 0].max() == 5.0

    def test_merge_offsets_components(self, circle):
        other = generate_mesh(CircleShape(center=(0.0, 0.0), radius=2.0), n_elements=8)
        merged = merge_meshes([circle, other])
        assert merged.n_nodes == circle.n_nodes + 8
        assert merged.n_components == 2
        assert merged.elements.max() == merged.n_nodes - 1
        assert np.all(merged.node_component[circle.n_nodes :] == 1)


class TestFrames:
    def test_jacobian_of_stretched_element(self):
        mesh = generate_mesh(LineShape(p0=(0.0, 0.0), p1=(1.0, 0.0)), n_elements=1)
        stretched = mesh.with_current(2.0 * mesh.reference)
        frame = element_frame(stretched, 0)
        assert frame.jacobian == pytest.approx(0.5)
        assert frame.length_current == pytest.approx(2.0)
        assert element_frame(stretched, 0, Configuration.REFERENCE).length_reference == pytest.approx(1.0)

    def test_collapsed_element(self):
        mesh = generate_mesh(LineShape(p0=(0.0, 0.0), p1=(1.0, 0.0)), n_elements=2)
        collapsed = mesh.current.copy()
        collapsed[1] = collapsed[0]
        with pytest.raises(DegenerateElementError):
            element_frames(mesh.with_current(collapsed))


class TestMassAndProjection:
    def test_mass_sums_to_length(self, circle):
        mass = assemble_mass_matrix(circle)
        perimeter = 40 * 2.0 * 0.5 * math.sin(math.pi / 40)
        ones = np.ones(circle.n_nodes)
        assert ones @ (mass @ ones) == pytest.approx(perimeter)
        assert integrate(circle, ones) == pytest.approx(perimeter)

    def test_constant_reproduction(self, circle):
        nodal = project_l2(circle, lambda s_q: np.full((circle.n_elements, len(s_q)), 3.0))
        assert_allclose(nodal, 3.0, atol=1e-10)

    def test_idempotence(self, circle, rng):
        field = rng.standard_normal((circle.n_nodes, 2))
        solver = MassSolver(circle)
        once = project_l2(circle, _nodal_to_quadrature(circle, field), solver)
        assert_allclose(once, field, atol=1e-10)

    def test_matches_dense_solve(self, circle):
        values = np.sin(np.arange(circle.n_elements * 3, dtype=float)).reshape(circle.n_elements, 3)
        nodal = project_l2(circle, lambda s_q: values)
        dense = np.linalg.solve(assemble_mass_matrix(circle).toarray(), assemble_load(circle, values))
        assert_allclose(nodal, dense, atol=1e-10)

    def test_rejects_non_finite_integrand(self, circle):
        with pytest.raises(ValueError):
            project_l2(circle, lambda s_q: np.full((circle.n_elements, len(s_q)), np.nan))

    def test_rejects_wrong_shape(self, circle):
        with pytest.raises(ValueError):
            project_l2(circle, lambda s_q: np.zeros((3, 3)))


class TestMeshFiles:
    def test_round_trip_recovers_components(self, tmp_path, circle):
        other = generate_mesh(LineShape(p0=(2.0, 0.0), p1=(3.0, 0.0)), n_elements=3)
        merged = merge_meshes([circle, other])
        path = tmp_path / "mesh.txt"
        write_mesh(merged, path)
        loaded = read_mesh(path)
        assert_allclose(loaded.reference, merged.reference, rtol=0, atol=0)
        np.testing.assert_array_equal(loaded.elements, merged.elements)
        assert loaded.n_components == 2
        assert not loaded.closed

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("3\n0 0\n")
        with pytest.raises(ValueError):
            read_mesh(path)

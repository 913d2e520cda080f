import csv

import numpy as np
import pytest

from app.services.convergence_service import ConvergenceRow, ConvergenceTable, ObservedOrder
from app.services.geometry_service import build_intersections
from app.services.grid_service import StaggeredState
from app.services.interface_mesh_service import CircleShape, generate_mesh
from app.services.jump_service import JumpField
from app.services.output_service import (
    CHECKPOINT_MAGIC,
    CROSSING_HEADER,
    ERROR_HEADER,
    FIELD_MAGIC,
    JUMP_HEADER,
    LAGRANGIAN_HEADER,
    check_vtk,
    read_checkpoint,
    read_container,
    read_field_dump,
    write_checkpoint,
    write_container,
    write_convergence_csv,
    write_crossings_csv,
    write_error_csv,
    write_field_dump,
    write_force_csv,
    write_jumps_csv,
    write_lagrangian_csv,
    write_vtk,
)
from app.services.penalty_service import KinematicsKind, KinematicsSpec, prescribed_motion
from app.services.report_service import ErrorReport
from app.services.solver_service import TimeStepperState


@pytest.fixture
def state(grid8, rng) -> StaggeredState:
    return StaggeredState(u=rng.normal(size=grid8.u_shape), v=rng.normal(size=grid8.v_shape), p=rng.normal(size=grid8.p_shape))


@pytest.fixture
def circle():
    return generate_mesh(CircleShape(center=(0.5, 0.5), radius=0.3), n_elements=24)


def _rows(path):
    with path.open() as fh:
        return list(csv.reader(fh))


class TestFieldDump:
    def test_round_trip_is_bitwise(self, tmp_path, grid8, state):
        path = write_field_dump(tmp_path / "out" / "field.bin", state, grid8, 0.125)
        back, grid, t = read_field_dump(path)
        np.testing.assert_array_equal(back.u, state.u)
        np.testing.assert_array_equal(back.v, state.v)
        np.testing.assert_array_equal(back.p, state.p)
        assert t == 0.125
        assert grid == grid8

    def test_identical_inputs_give_identical_bytes(self, tmp_path, grid8, state):
        a = write_field_dump(tmp_path / "a.bin", state, grid8, 1.0)
        b = write_field_dump(tmp_path / "b.bin", state.copy(), grid8, 1.0)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_magic_rejected(self, tmp_path):
        path = write_container(tmp_path / "x.bin", "OTHER 1", {}, {"a": np.ones(3)})
        with pytest.raises(ValueError, match="not a"):
            read_container(path, FIELD_MAGIC)

    def test_truncated_payload_rejected(self, tmp_path, grid8, state):
        path = write_field_dump(tmp_path / "field.bin", state, grid8, 0.0)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            read_field_dump(path)


class TestCheckpoint:
    def test_round_trip_with_interface(self, tmp_path, grid8, state, circle, rng):
        circle.current = circle.current + 0.01
        st = TimeStepperState.initial(grid8, circle, state)
        st.t, st.step = 0.3, 7
        st.U_prev = rng.normal(size=circle.reference.shape)
        st.force = rng.normal(size=circle.reference.shape)
        st.advection_prev = (rng.normal(size=grid8.u_shape), rng.normal(size=grid8.v_shape))

        back, grid = read_checkpoint(write_checkpoint(tmp_path / "ck.bin", st, grid8))

        assert grid == grid8
        assert (back.t, back.step) == (0.3, 7)
        np.testing.assert_array_equal(back.state.u, st.state.u)
        np.testing.assert_array_equal(back.mesh.current, circle.current)
        np.testing.assert_array_equal(back.mesh.reference, circle.reference)
        np.testing.assert_array_equal(back.mesh.elements, circle.elements)
        assert back.mesh.closed
        np.testing.assert_array_equal(back.U_prev, st.U_prev)
        np.testing.assert_array_equal(back.force, st.force)
        np.testing.assert_array_equal(back.advection_prev[1], st.advection_prev[1])

    def test_interface_free_state(self, tmp_path, grid8, state):
        st = TimeStepperState.initial(grid8, None, state)
        back, _ = read_checkpoint(write_checkpoint(tmp_path / "ck.bin", st, grid8))
        assert back.mesh is None
        assert back.U_prev is None
        assert back.advection_prev is None

    def test_prescribed_positions_follow_from_kinematics(self, tmp_path, grid8, state, circle):
        kin = [KinematicsSpec(kind=KinematicsKind.ROTATION, center=(0.5, 0.5), omega=2.0)]
        st = TimeStepperState.initial(grid8, circle, state)
        st.t = 0.4
        path = write_checkpoint(tmp_path / "ck.bin", st, grid8)

        _, arrays = read_container(path, CHECKPOINT_MAGIC)
        assert "prescribed" not in arrays
        back, _ = read_checkpoint(path)
        xi, W = prescribed_motion(back.mesh, kin, back.t)
        xi_ref, W_ref = prescribed_motion(circle, kin, st.t)
        np.testing.assert_array_equal(xi, xi_ref)
        np.testing.assert_array_equal(W, W_ref)


class TestVtk:
    def test_written_file_is_consistent(self, tmp_path, grid8, state):
        path = write_vtk(tmp_path / "f.vtk", state, grid8)
        assert check_vtk(path) == (8, 8)
        text = path.read_text()
        assert "DIMENSIONS 8 8 1" in text
        assert "SCALARS pressure double 1" in text

    def test_missing_values_detected(self, tmp_path, grid8, state):
        path = write_vtk(tmp_path / "f.vtk", state, grid8)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError, match="data blocks"):
            check_vtk(path)

    def test_missing_header_detected(self, tmp_path):
        path = tmp_path / "bad.vtk"
        path.write_text("hello\n")
        with pytest.raises(ValueError, match="header"):
            check_vtk(path)


class TestCsv:
    def test_error_csv(self, tmp_path):
        report = ErrorReport(scenario="couette", h=0.1, t=1.0)
        report.add("u", "Linf", "full", 0.25)
        rows = _rows(write_error_csv(tmp_path / "err.csv", report))
        assert rows[0] == ERROR_HEADER
        assert rows[1] == ["u", "Linf", "full", "0.25"]

    def test_force_csv(self, tmp_path):
        rows = _rows(write_force_csv(tmp_path / "f.csv", np.array([[0.5, 1.25, -0.125]])))
        assert rows == [["time", "C_D", "C_L"], ["0.5", "1.25", "-0.125"]]

    def test_lagrangian_csv_without_samples(self, tmp_path, circle):
        U = np.zeros_like(circle.current)
        rows = _rows(write_lagrangian_csv(tmp_path / "lag.csv", circle, U))
        assert rows[0] == LAGRANGIAN_HEADER
        assert len(rows) == circle.n_nodes + 1
        assert rows[1][6] == "nan"

    def test_jumps_csv(self, tmp_path, circle):
        jumps = JumpField.zeros(circle.n_nodes)
        jumps.pj[:] = 2.0
        rows = _rows(write_jumps_csv(tmp_path / "j.csv", circle, jumps))
        assert rows[0] == JUMP_HEADER
        assert {r[3] for r in rows[1:]} == {"2.0"}

    def test_crossings_csv(self, tmp_path, grid8, circle):
        intersections = build_intersections(circle, grid8)
        rows = _rows(write_crossings_csv(tmp_path / "c.csv", intersections))
        assert rows[0] == CROSSING_HEADER
        assert len(rows) - 1 == intersections.count

    def test_convergence_csv_orders(self, tmp_path):
        table = ConvergenceTable(
            scenario="couette",
            rows=[
                ConvergenceRow(nx=8, h=0.25, errors={"u.inf.full": 0.4}),
                ConvergenceRow(nx=16, h=0.125, errors={"u.inf.full": 0.1}),
                ConvergenceRow(nx=32, h=0.0625, status="failed", message="diverged"),
            ],
            orders=[ObservedOrder(key="u.inf.full", h_coarse=0.25, h_fine=0.125, order=2.0)],
        )
        rows = _rows(write_convergence_csv(tmp_path / "conv.csv", table))
        assert rows[1] == ["8", "0.25", "ok", "u.inf.full", "0.4", ""]
        assert rows[2] == ["16", "0.125", "ok", "u.inf.full", "0.1", "2.0"]
        assert rows[3] == ["32", "0.0625", "failed", "", "", ""]

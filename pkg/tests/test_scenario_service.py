from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.exceptions import ConfigError
from app.services.analytic_service import CouetteReference, analytic_solution
from app.services.geometry_service import FluidSide
from app.services.scenario_service import (
    PRESETS,
    deep_merge,
    initial_state,
    list_presets,
    load_scenario,
    prepare,
    preset_config,
    run_scenario,
    with_resolution,
)
from app.services.solver_service import CouplingMode

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestPresets:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_every_preset_validates(self, name):
        config = preset_config(name)
        assert config.name == name
        assert config.coupling == CouplingMode.IIM_FULL

    def test_listing(self):
        assert "couette" in list_presets()
        assert list_presets() == sorted(list_presets())

    def test_reynolds_numbers(self):
        assert preset_config("cylinder_re40").reynolds == pytest.approx(40.0)
        assert preset_config("poiseuille").reynolds == pytest.approx(200.0 / 3.0)

    def test_spinning_cylinder_surface_speed(self):
        kin = preset_config("spinning_cylinder").kinematics[0]
        assert kin.omega * 0.5 == pytest.approx(1.0)

    def test_overrides_merge_deeply(self):
        config = preset_config("couette", {"grid": {"nx": 32}, "coupling": "ib"})
        assert config.grid.nx == 32
        assert config.grid.extent == (2.0, 2.0)
        assert config.coupling == CouplingMode.IB

    def test_cell_count_matches_built_grid(self):
        config = preset_config("poiseuille", {"grid": {"extent": (5.0, 2.5)}})
        grid = config.grid.build()
        assert config.grid.ny == grid.ny == 16
        assert config.grid.cells == grid.nx * grid.ny

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_config("taylor_couette")

    def test_invalid_override(self):
        with pytest.raises(ConfigError):
            preset_config("couette", {"fluid": {"mu": -1.0}})

    def test_reference_boundaries_need_a_reference(self):
        with pytest.raises(ConfigError):
            preset_config("couette", {"reference": None})

    def test_stopping_rule_required(self):
        with pytest.raises(ConfigError):
            preset_config("cylinder_re20", {"time": {"end_time": None}})


def test_deep_merge_leaves_inputs_alone():
    base = {"a": {"b": 1, "c": [1, 2]}, "d": 1}
    merged = deep_merge(base, {"a": {"b": 2}, "e": 3})
    assert merged == {"a": {"b": 2, "c": [1, 2]}, "d": 1, "e": 3}
    assert base["a"]["b"] == 1


class TestScenarioFiles:
    @pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
    def test_shipped_configs_load(self, path):
        config = load_scenario(path)
        assert config.grid.nx >= 16

    def test_preset_file_with_overrides(self, tmp_path):
        path = tmp_path / "small.toml"
        path.write_text('preset = "couette"\n\n[grid]\nnx = 8\n\n[time]\nmax_steps = 3\n')
        config = load_scenario(path, {"fluid": {"mu": 0.05}})
        assert config.name == "couette"
        assert config.grid.nx == 8
        assert config.time.max_steps == 3
        assert config.fluid.mu == 0.05

    def test_name_defaults_to_file_stem(self, tmp_path):
        path = tmp_path / "box.toml"
        path.write_text(
            "[grid]\nextent = [1.0, 1.0]\nnx = 8\n\n"
            "[boundaries]\nwest = [{kind = \"velocity\"}]\neast = [{kind = \"velocity\"}]\n"
            "south = [{kind = \"velocity\"}]\nnorth = [{kind = \"velocity\", velocity = [1.0, 0.0]}]\n\n"
            "[fluid]\nmu = 0.1\n\n[time]\ndt_factor = 0.5\nmax_steps = 2\n"
        )
        config = load_scenario(path)
        assert config.name == "box"
        assert config.interface.shapes == []

    def test_syntax_error(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[grid\nnx = 8\n")
        with pytest.raises(ConfigError):
            load_scenario(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scenario(tmp_path / "absent.toml")

    def test_incomplete_file(self, tmp_path):
        path = tmp_path / "partial.toml"
        path.write_text("[grid]\nnx = 8\n")
        with pytest.raises(ConfigError):
            load_scenario(path)


class TestPreparation:
    def test_couette_problem(self):
        prepared = prepare(preset_config("couette"))
        assert prepared.grid.h == pytest.approx(0.125)
        assert prepared.problem.dt == pytest.approx(0.05 * 0.125)
        assert prepared.problem.default_side == FluidSide.PLUS
        assert prepared.mesh.n_components == 1
        assert prepared.problem.reference is not None

    def test_eccentric_problem_has_two_components(self):
        prepared = prepare(preset_config("eccentric", {"grid": {"nx": 32}}))
        assert prepared.mesh.n_components == 2
        assert prepared.problem.default_side == FluidSide.MINUS

    def test_reference_initial_condition(self):
        prepared = prepare(preset_config("couette"))
        state = initial_state(prepared)
        ref = CouetteReference()
        u_ref = analytic_solution(ref, *prepared.grid.u_points())[0]
        assert_allclose(state.u[1:-1], u_ref[1:-1])
        assert np.all(np.isfinite(state.p))

    def test_rest_initial_condition(self):
        prepared = prepare(preset_config("cylinder_re20", {"grid": {"origin": (-2.0, -2.0), "extent": (6.0, 4.0), "nx": 24}}))
        state = initial_state(prepared)
        assert_allclose(state.u[0], 1.0)
        assert not state.u[1:-1].any()

    def test_with_resolution(self):
        config = preset_config("couette")
        finer = with_resolution(config, 32)
        assert finer.grid.nx == 32
        assert finer.reference == config.reference
        assert finer.kinematics == config.kinematics

    @pytest.mark.slow
    def test_couette_runs_a_few_steps(self):
        prepared = prepare(preset_config("couette"))
        result = run_scenario(prepared, max_steps=2)
        assert result.steps == 2
        assert len(result.force_history) == 2
        assert np.all(np.isfinite(result.final.state.u))

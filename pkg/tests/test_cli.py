from pathlib import Path

import pytest

from app import cli
from app.core.exceptions import ProbeOutsideDomainError, SolverError
from app.services.output_service import check_vtk

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_missing_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2


def test_missing_config_is_config_error(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.toml"), "--output-root", str(tmp_path)]) == cli.EXIT_CONFIG


def test_invalid_config_is_config_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text('preset = "couette"\n[grid]\nnx = 1\n')
    assert cli.main(["run", str(path), "--output-root", str(tmp_path)]) == cli.EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise SolverError("time step unstable")

    monkeypatch.setattr(cli, "run_scenario", fail)
    code = cli.main(["run", str(CONFIG_DIR / "couette.toml"), "--output-root", str(tmp_path)])
    assert code == cli.EXIT_SOLVER


def test_sample_outside_domain_is_solver_failure(tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise ProbeOutsideDomainError("probe at (1.1, 0.5) is outside the domain")

    monkeypatch.setattr(cli, "run_scenario", fail)
    code = cli.main(["run", str(CONFIG_DIR / "couette.toml"), "--output-root", str(tmp_path)])
    assert code == cli.EXIT_SOLVER


def test_failed_convergence_level_exit_code(tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise SolverError("diverged")

    monkeypatch.setattr("app.services.convergence_service.run_scenario", fail)
    code = cli.main(
        ["converge", str(CONFIG_DIR / "couette.toml"), "--levels", "8", "16", "--max-steps", "1", "--output-root", str(tmp_path)]
    )
    assert code == cli.EXIT_SOLVER
    assert (tmp_path / "couette" / "convergence.csv").exists()


def test_short_run_writes_artifacts(tmp_path):
    code = cli.main(["run", str(CONFIG_DIR / "couette.toml"), "--max-steps", "2", "--output-root", str(tmp_path)])
    assert code == cli.EXIT_OK
    run_dir = tmp_path / "couette"
    for name in ("fields.field", "lagrangian.csv", "forces.csv", "errors.csv"):
        assert (run_dir / name).exists(), name
    assert check_vtk(run_dir / "fields.vtk") == (16, 16)


def test_single_level_study_rejected(tmp_path):
    code = cli.main(["converge", str(CONFIG_DIR / "couette.toml"), "--levels", "8", "--output-root", str(tmp_path)])
    assert code == cli.EXIT_CONFIG

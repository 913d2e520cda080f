import math

import pytest

from app.core.exceptions import SolverError
from app.services import convergence_service
from app.services.convergence_service import (
    STATUS_FAILED,
    STATUS_OK,
    ConvergenceRow,
    ConvergenceTable,
    compare_coupling,
    observed_order,
    observed_orders,
    run_convergence_study,
    run_level,
)
from app.services.scenario_service import preset_config
from app.services.solver_service import CouplingMode


@pytest.fixture
def small_couette():
    return preset_config("couette", {"grid": {"nx": 8}})


class TestObservedOrder:
    def test_second_order_pair(self):
        order, flag = observed_order(4e-2, 1e-2, 0.2, 0.1)
        assert order == pytest.approx(2.0)
        assert flag == ""

    def test_identical_resolution_is_flagged(self):
        assert observed_order(1.0, 0.5, 0.1, 0.1) == (None, "identical resolution")

    def test_zero_error_is_flagged(self):
        assert observed_order(0.0, 0.5, 0.2, 0.1) == (None, "zero error")

    def test_failed_levels_are_skipped(self):
        rows = [
            ConvergenceRow(nx=10, h=0.2, errors={"u.L2.full": 4.0, "p.L2.full": 1.0}),
            ConvergenceRow(nx=20, h=0.1, status=STATUS_FAILED),
            ConvergenceRow(nx=40, h=0.05, errors={"u.L2.full": 1.0}),
        ]
        orders = observed_orders(rows)
        assert len(orders) == 1
        assert orders[0].key == "u.L2.full"
        assert orders[0].order == pytest.approx(1.0)
        table = ConvergenceTable(scenario="s", rows=rows, orders=orders)
        assert table.order("u.L2.full", 0.05) == pytest.approx(1.0)
        assert table.order("p.L2.full", 0.05) is None


class TestStudies:
    def test_needs_two_levels(self, small_couette):
        with pytest.raises(ValueError):
            run_convergence_study(small_couette, [8])

    def test_needs_a_reference(self):
        config = preset_config("cylinder_re20", {"grid": {"origin": (-2.0, -2.0), "extent": (6.0, 4.0), "nx": 24}})
        with pytest.raises(ValueError):
            run_convergence_study(config, [24, 48])
        with pytest.raises(ValueError):
            compare_coupling(config)

    def test_solver_failure_becomes_a_failed_row(self, small_couette, monkeypatch):
        def diverge(*args, **kwargs):
            raise SolverError("diverged", residuals=[1.0])

        monkeypatch.setattr(convergence_service, "run_scenario", diverge)
        row = run_level(small_couette, 8, max_steps=1)
        assert row.status == STATUS_FAILED
        assert row.message == "diverged"
        assert row.h == pytest.approx(0.25)

    def test_failed_mode_is_reported(self, small_couette, monkeypatch):
        def diverge(*args, **kwargs):
            raise SolverError("diverged")

        monkeypatch.setattr(convergence_service, "run_scenario", diverge)
        comparison = compare_coupling(small_couette, [CouplingMode.IB], max_steps=1)
        assert comparison.reports == {}
        assert comparison.failures == {"ib": "diverged"}

    @pytest.mark.slow
    def test_two_level_couette_study(self, small_couette):
        table = run_convergence_study(small_couette, [16, 8], max_steps=1)
        assert [row.nx for row in table.rows] == [8, 16]
        assert all(row.status == STATUS_OK for row in table.rows)
        assert "velocity.L2.full" in table.rows[0].errors
        assert any(o.key == "velocity.L2.full" for o in table.orders)
        for o in table.orders:
            assert o.order is None or math.isfinite(o.order)

    @pytest.mark.slow
    def test_coupling_comparison_shares_one_setup(self, small_couette):
        comparison = compare_coupling(small_couette, [CouplingMode.IB, CouplingMode.IIM_FULL], max_steps=1)
        assert set(comparison.reports) == {"ib", "iim_full"}
        assert comparison.failures == {}

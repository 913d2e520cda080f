import pytest
from fastapi.testclient import TestClient

from app.api.v1 import simulations
from app.core.config import settings
from app.core.exceptions import ProbeOutsideDomainError, SolverError
from app.main import app
from app.services.scenario_service import list_presets


@pytest.fixture
def client() -> TestClient:
    with TestClient(app) as c:
        yield c


def test_health(client):
    resp = client.get("/api/v1/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "healthy"


def test_root_links(client):
    body = client.get("/").json()
    assert body["presets"] == "/api/v1/simulations/presets"


def test_preset_catalogue(client):
    resp = client.get("/api/v1/simulations/presets")
    assert resp.status_code == 200
    assert [p["name"] for p in resp.json()] == list_presets()


def test_preset_detail(client):
    body = client.get("/api/v1/simulations/presets/couette").json()
    assert body["name"] == "couette"
    assert body["reference"]["kind"] == "couette"


def test_unknown_preset_is_bad_request(client):
    resp = client.get("/api/v1/simulations/presets/nope")
    assert resp.status_code == 400
    assert "unknown preset" in resp.json()["detail"]


class TestReference:
    def test_poiseuille_centreline(self, client):
        body = client.get("/api/v1/simulations/reference/poiseuille", params={"x": 2.5, "y": 2.5}).json()
        assert body["u"] == pytest.approx(1.0)
        assert body["v"] == pytest.approx(0.0, abs=1e-12)
        assert body["p"] is not None

    def test_pressure_undefined_outside_channel(self, client):
        body = client.get("/api/v1/simulations/reference/poiseuille", params={"x": 2.5, "y": 0.5}).json()
        assert body["p"] is None

    def test_preset_without_reference(self, client):
        resp = client.get("/api/v1/simulations/reference/cylinder_re20", params={"x": 0.0, "y": 0.0})
        assert resp.status_code == 400

    def test_missing_coordinates(self, client):
        assert client.get("/api/v1/simulations/reference/couette", params={"x": 0.0}).status_code == 422


class TestRun:
    def test_short_couette_run(self, client):
        resp = client.post("/api/v1/simulations/run", json={"preset": "couette", "max_steps": 2})
        assert resp.status_code == 200
        body = resp.json()
        assert 1 <= body["steps"] <= 2
        assert body["drag_coefficient"] is not None
        assert any(e["field"] == "velocity" for e in body["errors"])

    def test_invalid_override(self, client):
        resp = client.post("/api/v1/simulations/run", json={"preset": "couette", "overrides": {"grid": {"nx": 1}}})
        assert resp.status_code == 400

    def test_non_positive_step_cap(self, client):
        resp = client.post("/api/v1/simulations/run", json={"preset": "couette", "max_steps": 0})
        assert resp.status_code == 422

    def test_cylinder_preset_exceeds_cell_limit(self, client):
        resp = client.post("/api/v1/simulations/run", json={"preset": "cylinder_re20", "max_steps": 1})
        assert resp.status_code == 400
        assert "921600 cells" in resp.json()["detail"]

    def test_refined_override_checked_against_configured_limit(self, client, monkeypatch):
        monkeypatch.setattr(settings, "api_max_cells", 100)
        resp = client.post(
            "/api/v1/simulations/run", json={"preset": "couette", "overrides": {"grid": {"nx": 16}}, "max_steps": 1}
        )
        assert resp.status_code == 400
        assert "exceeds the limit of 100" in resp.json()["detail"]

    def test_solver_failure_maps_to_422(self, client, monkeypatch):
        def fail(*args, **kwargs):
            raise SolverError("GMRES stalled", residuals=[1.0, 0.5])

        monkeypatch.setattr(simulations, "run_scenario", fail)
        resp = client.post("/api/v1/simulations/run", json={"preset": "couette", "max_steps": 1})
        assert resp.status_code == 422
        assert "GMRES stalled" in resp.json()["detail"]

    def test_sample_outside_domain_maps_to_422(self, client, monkeypatch):
        def fail(*args, **kwargs):
            raise ProbeOutsideDomainError("probe at (5.1, 2.0) is outside the domain")

        monkeypatch.setattr(simulations, "run_scenario", fail)
        resp = client.post("/api/v1/simulations/run", json={"preset": "couette", "max_steps": 1})
        assert resp.status_code == 422
        assert "outside the domain" in resp.json()["detail"]


def test_metrics_exposed(client):
    client.get("/api/v1/health")
    resp = client.get("/metrics")
    assert resp.status_code == 200
    assert "http_requests_total" in resp.text

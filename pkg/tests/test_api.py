import pytest
from fastapi.testclient import TestClient

from src.backend import api_main
from src.core.event_handler import BaseEvent, ProtocolEvents
from src.core.metrics import MetricsReport, OperationRecord, emit_tables
from src.core.protocol_logger import ProtocolEventLogger


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setenv("TRUSTSAS_OUT_DIR", str(tmp_path))
    run = tmp_path / "unit-1"
    (run / "chains").mkdir(parents=True)
    report = MetricsReport("unit", 1, operations=[OperationRecord("query", 0, 1, 0.0, 4.0)])
    report.save(run / "metrics.json")
    emit_tables(report, run / "tables")
    trace = ProtocolEventLogger()
    trace(BaseEvent(ProtocolEvents.EPOCH_STARTED, 0.0, "sim", {"epoch": 1}))
    trace(BaseEvent(ProtocolEvents.QUERY_AUTHORIZED, 1.0, "db0", {"cluster": 0}, "db"))
    trace.dump_trace(run / "trace.jsonl")
    return TestClient(api_main.app)


def test_health(client, tmp_path):
    response = client.get("/api/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "runs_dir": str(tmp_path)}


def test_list_runs(client):
    (run,) = client.get("/api/runs").json()
    assert run["run"] == "unit-1"
    assert run["status"] == "finished"
    assert "end_to_end" in run["tables"]


def test_metrics_and_tables(client):
    assert client.get("/api/runs/unit-1/metrics").json()["scenario"] == "unit"
    body = client.get("/api/runs/unit-1/tables/end_to_end").json()
    assert body["rows"][0]["operation"] == "query"
    assert body["rows"][0]["measured"] == "4.000000"


def test_trace_filtering(client):
    assert client.get("/api/runs/unit-1/trace").json()["count"] == 2
    body = client.get("/api/runs/unit-1/trace", params={"event": ProtocolEvents.QUERY_AUTHORIZED}).json()
    assert body["count"] == 1
    assert body["events"][0]["node"] == "db0"
    assert client.get("/api/runs/unit-1/trace", params={"limit": 1}).json()["events"][0]["event"] == \
        ProtocolEvents.EPOCH_STARTED


@pytest.mark.parametrize("url", [
    "/api/runs/nope/metrics",
    "/api/runs/unit-1/tables/table9",
    "/api/runs/unit-1/chains/global",
    "/api/runs/..%2F..%2Fetc/metrics",
])
def test_missing_resources_are_404(client, url):
    assert client.get(url).status_code == 404


def test_scenario_run_rejections(client):
    assert client.post("/api/scenarios/run", json={"scenario": "atlantis"}).status_code == 404
    assert client.post("/api/scenarios/run", json={"scenario": "small", "run_name": "../x"}).status_code == 400
    api_main.run_status["busy"] = "running"
    try:
        response = client.post("/api/scenarios/run", json={"scenario": "small", "run_name": "busy"})
        assert response.status_code == 409
    finally:
        api_main.run_status.pop("busy")

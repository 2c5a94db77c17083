import pytest

from src.core.errors import ConfigError
from src.core.metrics import (
    TABLE_COLUMNS, TABLE_FILES, MetricsReport, OperationRecord, PrimitiveCharge, emit_tables, read_table,
    simulate_end_to_end, table_rows, write_metrics_csv,
)


def _report():
    report = MetricsReport("unit", 3, trace_hash="ab" * 32, sim_time=12.5)
    report.operations = [
        OperationRecord("query", 0, 1, 1.0, 3.0, {"epid_sign": 0.5, "bft": 1.5}),
        OperationRecord("query", 1, 1, 2.0, 6.0, {"epid_sign": 0.5, "bft": 3.5}),
        OperationRecord("query", 2, 1, 2.0, 9.0, {}, status="timeout"),
        OperationRecord("usage", 0, 1, 10.0, 11.0),
    ]
    report.consensus = [
        {"chain": "local-0", "validators": 4, "committed": True, "duration": 0.5},
        {"chain": "local-0", "validators": 4, "committed": False, "duration": None},
    ]
    report.pir = [{"cluster_id": 0, "epoch": 1, "q": 2, "r": 64, "s": 128, "elements_per_server": 384}]
    report.primitives = {"epid_sign": PrimitiveCharge(4, 0.54)}
    report.traffic = {"messages": 10, "bytes": 2048, "dropped": 1}
    return report


def test_empty_report_emits_header_only_tables(tmp_path):
    paths = emit_tables(MetricsReport("empty", 0), tmp_path)
    assert sorted(p.stem for p in paths) == sorted(TABLE_FILES)
    for path in paths:
        assert path.read_text() == ",".join(TABLE_COLUMNS) + "\n"


def test_table_rows_from_measurements():
    tables = table_rows(_report())
    assert tables["epid"] == [("EPID.Sign", "a + 6*d2 + 2*d3 exponentiations; 4 calls", "0.135000")]
    assert tables["pir"][0][1] == "q*(r+s) = 2*(64+128) = 384"
    (bft,) = tables["bft"]
    assert bft[0] == "local-0 consensus, n=4"
    assert "quorum 3, 1/2 committed" in bft[1]
    assert bft[2] == "0.500000"
    end_to_end = {row[0]: row for row in tables["end_to_end"]}
    assert set(end_to_end) == {"query", "usage"}
    assert end_to_end["query"][2] == "3.000000"
    assert end_to_end["usage"][2] == "1.000000"


def test_save_and_load(tmp_path):
    report = _report()
    path = tmp_path / "metrics.json"
    report.save(path)
    loaded = MetricsReport.load(path)
    assert loaded.to_dict() == report.to_dict()
    assert loaded.durations("query") == [2.0, 4.0]
    assert loaded.durations("query", status=None) == [2.0, 4.0, 7.0]


def test_load_rejects_malformed_file(tmp_path):
    path = tmp_path / "metrics.json"
    path.write_text("[1, 2")
    with pytest.raises(ConfigError):
        MetricsReport.load(path)
    with pytest.raises(ConfigError):
        MetricsReport.load(tmp_path / "absent.json")


def test_summary_csv(tmp_path):
    path = tmp_path / "metrics.csv"
    write_metrics_csv(_report(), path)
    rows = {row["metric"]: row["value"] for row in read_table(path)}
    assert rows["query_count"] == "2"
    assert rows["query_mean_s"] == "3.000000"
    assert rows["network_bytes"] == "2048"
    assert rows["consensus_instances"] == "2"
    assert rows["consensus_committed"] == "1"


@pytest.mark.slow
def test_cost_model_tracks_deployment_scale():
    report = simulate_end_to_end()
    reference = {"rekeying": 77.47, "join": 78.12, "query": 13.15, "usage": 1.85}
    for operation, expected in reference.items():
        (measured,) = report.durations(operation)
        assert expected / 3 <= measured <= expected * 3, operation

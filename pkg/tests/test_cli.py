import pytest

from src.cli import build_parser, main
from src.core.metrics import MetricsReport, OperationRecord, TABLE_FILES

from conftest import CONFIG_DIR


def test_tables_from_saved_metrics(tmp_path, capsys):
    report = MetricsReport("unit", 1, operations=[OperationRecord("usage", 0, 1, 0.0, 2.0)])
    metrics = tmp_path / "metrics.json"
    report.save(metrics)
    assert main(["tables", "--metrics", str(metrics), "--out", str(tmp_path / "tables")]) == 0
    assert sorted(p.stem for p in (tmp_path / "tables").glob("*.csv")) == sorted(TABLE_FILES)
    assert "end_to_end.csv" in capsys.readouterr().out


def test_unreadable_metrics_is_a_usage_error(tmp_path):
    assert main(["tables", "--metrics", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 2


def test_invalid_scenario_is_a_usage_error(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text('{"epochs": 0}')
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()


def test_verify_missing_dump_fails(tmp_path):
    assert main(["verify", str(tmp_path / "local-0.jsonl")]) == 1


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["run", "--config", "x.json", "--seed", "3", "--debug-invariants"])
    assert args.seed == 3 and args.debug_invariants


@pytest.mark.slow
def test_run_then_verify_local_chain(tmp_path):
    out = tmp_path / "run"
    config = str(CONFIG_DIR / "scenarios" / "small.json")
    assert main(["run", "--config", config, "--out", str(out), "--debug-invariants"]) == 0
    chains = out / "chains"
    local = sorted(p for p in chains.glob("local-*.jsonl"))
    assert local
    assert main(["verify", str(local[0]), "--validators", str(chains / "global.jsonl")]) == 0

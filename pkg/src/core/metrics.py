"""
Run metrics and the end-to-end cost tables.

A MetricsReport collects what a scenario measured: per-operation simulated
durations with their cost components, consensus instances, network traffic,
PIR batches and per-primitive charges. `emit_tables` lays it out as five CSV
tables with the columns operation, analytic_model, measured.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import mean
from typing import Dict, List, Optional, Sequence, Tuple

from .config import CalibrationTable, ConsensusConfig, NetworkConfig
from .errors import ConfigError

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("operation", "analytic_model", "measured")

TABLE_FILES = {
    "epid": "EPID primitives",
    "tbls": "TBLS primitives",
    "pir": "BatchPIR",
    "bft": "BFT",
    "end_to_end": "end-to-end algorithms",
}

# major operations of each algorithm
ANALYTIC_MODELS = {
    "rekeying": "DKG + TBLS.SignShareGen + EPID.Sign + BFT(n_i)",
    "join": "TwoWayEPID + Rekeying",
    "query": "EPID.Sign + tau*EPID.Verify + BatchPIR + BFT(n_i)",
    "usage": "t*(TBLS.SignShareGen + TBLS.SignShareVerify) + TBLS.SignReconstruct + BFT(l + n_c)",
}

PRIMITIVE_MODELS = {
    "epid_sign": ("epid", "EPID.Sign", "a + 6*d2 + 2*d3 exponentiations"),
    "epid_verify": ("epid", "EPID.Verify", "a + d1 + 6*d2 + 2*d3 exponentiations + 1 pairing product"),
    "dkg": ("tbls", "DKG", "linear in n"),
    "share_gen": ("tbls", "TBLS.SignShareGen", "1 hash-to-G1 + 1 G1 exponentiation"),
    "share_verify": ("tbls", "TBLS.SignShareVerify", "2 pairings"),
    "reconstruct": ("tbls", "TBLS.SignReconstruct", "t+1 G1 exponentiations"),
    "group_verify": ("tbls", "TBLS.GroupVerify", "2 pairings"),
    "pir_query_gen": ("pir", "BatchPIR query generation", "linear in q*r*l"),
    "pir_process": ("pir", "BatchPIR DB processing", "linear in q*r*s"),
    "pir_reconstruct": ("pir", "BatchPIR reconstruction", "q*s interpolations over t+1 points"),
}


@dataclass
class OperationRecord:
    """One run of an algorithm for one cluster"""
    operation: str
    cluster_id: int
    epoch: int
    started_at: float
    finished_at: float
    components: Dict[str, float] = field(default_factory=dict)
    status: str = "ok"

    @property
    def duration(self) -> float:
        return self.finished_at - self.started_at

    def to_dict(self) -> dict:
        data = asdict(self)
        data["duration"] = self.duration
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "OperationRecord":
        return cls(data["operation"], int(data["cluster_id"]), int(data["epoch"]), float(data["started_at"]),
                   float(data["finished_at"]), {k: float(v) for k, v in data.get("components", {}).items()},
                   data.get("status", "ok"))


@dataclass
class PrimitiveCharge:
    count: int = 0
    seconds: float = 0.0

    @property
    def per_call(self) -> float:
        return self.seconds / self.count if self.count else 0.0


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    trace_hash: str = ""
    sim_time: float = 0.0
    operations: List[OperationRecord] = field(default_factory=list)
    consensus: List[dict] = field(default_factory=list)
    traffic: dict = field(default_factory=dict)
    pir: List[dict] = field(default_factory=list)
    primitives: Dict[str, PrimitiveCharge] = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    invariant_violations: int = 0

    def durations(self, operation: str, status: Optional[str] = "ok") -> List[float]:
        return [op.duration for op in self.operations
                if op.operation == operation and (status is None or op.status == status)]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "trace_hash": self.trace_hash,
            "sim_time": self.sim_time,
            "operations": [op.to_dict() for op in self.operations],
            "consensus": list(self.consensus),
            "traffic": dict(self.traffic),
            "pir": list(self.pir),
            "primitives": {k: asdict(v) for k, v in sorted(self.primitives.items())},
            "parameters": dict(self.parameters),
            "invariant_violations": self.invariant_violations,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            scenario=data.get("scenario", ""),
            seed=int(data.get("seed", 0)),
            trace_hash=data.get("trace_hash", ""),
            sim_time=float(data.get("sim_time", 0.0)),
            operations=[OperationRecord.from_dict(op) for op in data.get("operations", [])],
            consensus=list(data.get("consensus", [])),
            traffic=dict(data.get("traffic", {})),
            pir=list(data.get("pir", [])),
            primitives={k: PrimitiveCharge(int(v["count"]), float(v["seconds"]))
                        for k, v in data.get("primitives", {}).items()},
            parameters=dict(data.get("parameters", {})),
            invariant_violations=int(data.get("invariant_violations", 0)),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "MetricsReport":
        """
        Raises:
            ConfigError: unreadable or malformed metrics file
        """
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError) as e:
            raise ConfigError(f"cannot read metrics {path}: {e}") from e

    def summary_rows(self) -> List[Tuple[str, str]]:
        """Flat (metric, value) pairs for metrics.csv"""
        rows = [("scenario", self.scenario), ("seed", str(self.seed)), ("trace_hash", self.trace_hash),
                ("sim_time_s", _fmt(self.sim_time)),
                ("invariant_violations", str(self.invariant_violations))]
        for key in ("messages", "bytes", "dropped"):
            if key in self.traffic:
                rows.append((f"network_{key}", str(self.traffic[key])))
        for operation in ANALYTIC_MODELS:
            durations = self.durations(operation)
            if durations:
                rows.append((f"{operation}_count", str(len(durations))))
                rows.append((f"{operation}_mean_s", _fmt(mean(durations))))
        committed = [c for c in self.consensus if c.get("committed")]
        rows.append(("consensus_instances", str(len(self.consensus))))
        rows.append(("consensus_committed", str(len(committed))))
        return rows


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _components_text(components: Dict[str, float]) -> str:
    return " + ".join(f"{k}={_fmt(v)}" for k, v in components.items())


def _mean_components(records: Sequence[OperationRecord]) -> Dict[str, float]:
    keys: List[str] = []
    for record in records:
        keys.extend(k for k in record.components if k not in keys)
    return {k: mean(r.components.get(k, 0.0) for r in records) for k in keys}


def table_rows(report: MetricsReport) -> Dict[str, List[Tuple[str, str, str]]]:
    """Rows of every table; a table without measurements has none"""
    tables: Dict[str, List[Tuple[str, str, str]]] = {name: [] for name in TABLE_FILES}
    for key, (table, operation, model) in PRIMITIVE_MODELS.items():
        charge = report.primitives.get(key)
        if charge is not None and charge.count:
            tables[table].append((operation, f"{model}; {charge.count} calls", _fmt(charge.per_call)))

    for batch in report.pir:
        q, r, s = batch["q"], batch["r"], batch["s"]
        label = f"BatchPIR communication per server (cluster {batch['cluster_id']}, epoch {batch['epoch']})"
        tables["pir"].append((label, f"q*(r+s) = {q}*({r}+{s}) = {q * (r + s)}",
                                     str(batch["elements_per_server"])))

    by_size: Dict[Tuple[str, int], List[dict]] = {}
    for run in report.consensus:
        by_size.setdefault((run.get("chain", "bft"), int(run.get("validators", 0))), []).append(run)
    for (chain, n), runs in sorted(by_size.items()):
        committed = [r for r in runs if r.get("committed") and r.get("duration") is not None]
        f = (n - 1) // 3
        quorum = max(2 * f + 1, math.ceil((n + f + 1) / 2)) if n else 0
        model = f"BFT({n}): quorum {quorum}, {len(committed)}/{len(runs)} committed"
        measured = _fmt(mean(r["duration"] for r in committed)) if committed else "aborted"
        tables["bft"].append((f"{chain} consensus, n={n}", model, measured))

    for operation, model in ANALYTIC_MODELS.items():
        records = [op for op in report.operations if op.operation == operation and op.status == "ok"]
        if not records:
            continue
        components = _mean_components(records)
        text = f"{model}: {_components_text(components)}" if components else model
        # a join's components include the epoch-end rekeying that admits it
        measured = mean(sum(r.components.values()) if r.components else r.duration for r in records)
        tables["end_to_end"].append((operation, text, _fmt(measured)))
    return tables


def emit_tables(report: MetricsReport, out_dir: Path) -> List[Path]:
    """
    Write one CSV per table; an empty report yields header-only files.

    Returns:
        paths written
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in table_rows(report).items():
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TABLE_COLUMNS)
            writer.writerows(rows)
        written.append(path)
    logger.info(f"wrote {len(written)} tables to {out_dir}")
    return written


def write_metrics_csv(report: MetricsReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("metric", "value"))
        writer.writerows(report.summary_rows())


def read_table(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


# Cost-model mode

def _bft_duration(n: int, calibration: CalibrationTable, consensus: ConsensusConfig, network: NetworkConfig,
                  validate_cost: float, payload_bytes: int, byzantine: int = 0, seed: int = 0):
    """One simulated consensus round among n placeholder validators"""
    from ..ledger.chain import Block, Transaction, TxKind, ValidatorSet, ZERO_HASH
    from ..ledger.consensus import run_consensus

    ids = [f"v{i:04d}" for i in range(n)]
    validators = ValidatorSet({v: "" for v in ids}, {v: "model" for v in ids})
    filler = Transaction(TxKind.SHARE_SIGNATURE, {"cluster_id": 0, "key_epoch": 1, "index": 0,
                                                  "message": "00" * max(0, payload_bytes // 2)}, ids[0])
    block = Block(1, ZERO_HASH, (filler,), ids[0], 0.0, ZERO_HASH)
    behaviors = {v: "silent" for v in ids[-byzantine:]} if byzantine else None
    outcome = run_consensus(validators, block, consensus, calibration, network, behaviors, seed=seed,
                            validate_cost=lambda b: validate_cost)
    if not outcome.committed:
        raise ConfigError(f"cost-model consensus among {n} validators did not commit")
    return outcome


def simulate_end_to_end(calibration: Optional[CalibrationTable] = None,
                     consensus: Optional[ConsensusConfig] = None,
                     network: Optional[NetworkConfig] = None,
                     n: int = 1000, t: int = 500, dbs: int = 7, tau: int = 10, leaders: int = 50,
                     q: int = 25, r: int = 1_000_000, s: int = 560, seed: int = 0) -> MetricsReport:
    """
    Compose calibrated primitive costs with simulated BFT rounds into the
    four end-to-end rows at deployment scale.
    """
    calibration = calibration or CalibrationTable()
    consensus = consensus or ConsensusConfig()
    network = network or NetworkConfig()
    bw = network.bandwidth_bps
    binding_bytes = 900

    rekey_bft = _bft_duration(n, calibration, consensus, network,
                              n * (calibration.share_verify_s + calibration.epid_verify_s), n * binding_bytes,
                              seed=seed)
    rekeying = {
        "dkg": calibration.dkg(n),
        "share_gen": calibration.share_gen_s,
        "epid_sign": calibration.epid_sign_s,
        "bft": rekey_bft.duration,
    }
    two_way = 2 * (calibration.epid_sign_s + calibration.epid_verify_s) + 2 * network.latency_s
    join = {"two_way_epid": two_way, **{f"rekeying_{k}": v for k, v in rekeying.items()}}

    query_bft = _bft_duration(n, calibration, consensus, network, q * calibration.record_verify_s, q * s,
                              seed=seed + 1)
    query = {
        "epid_sign": calibration.epid_sign_s,
        "epid_verify": tau * calibration.epid_verify_s,
        "pir_query_gen": calibration.pir_query_gen(q, r, dbs),
        "pir_upload": network.latency_s + q * r * 8 / bw,
        "pir_process": calibration.pir_process(q, r, s),
        "pir_download": network.latency_s + q * s * 8 / bw,
        "bft": query_bft.duration,
    }

    usage_bft = _bft_duration(dbs + leaders, calibration, consensus, network, calibration.group_verify_s, 512,
                              seed=seed + 2)
    usage = {
        "share_gen_verify": t * (calibration.share_gen_s + calibration.share_verify_s),
        "reconstruct": calibration.reconstruct(t),
        "bft": usage_bft.duration,
    }

    report = MetricsReport("end_to_end_model", seed, parameters={
        "n": n, "t": t, "dbs": dbs, "tau": tau, "leaders": leaders, "q": q, "r": r, "s": s,
        "latency_s": network.latency_s, "bandwidth_bps": bw, "fanout": consensus.fanout,
    })
    for operation, components in (("rekeying", rekeying), ("join", join), ("query", query), ("usage", usage)):
        total = sum(components.values())
        report.operations.append(OperationRecord(operation, 0, 0, 0.0, total, components))
        logger.info(f"cost model {operation}: {total:.2f} s")
    for run, chain, size in ((rekey_bft, "rekeying", n), (query_bft, "query", n), (usage_bft, "usage", dbs + leaders)):
        report.consensus.append({**run.to_dict(), "chain": chain, "validators": size})
    return report

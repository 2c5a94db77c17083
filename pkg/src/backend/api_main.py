from fastapi import FastAPI, HTTPException, BackgroundTasks
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field
from typing import Dict, List, Optional
from pathlib import Path
from dotenv import load_dotenv
import logging

load_dotenv()

from ..core.config import PROJECT_ROOT, default_out_dir, load_config, log_level
from ..core.errors import ConfigError, TrustSASError
from ..core.metrics import MetricsReport, read_table
from ..core.protocol_logger import load_trace
from ..core.scenario_engine import run_scenario
from ..ledger.chain import ChainContext, audit_chain, load_blocks
from ..protocol.system import GLOBAL_CHAIN

# Set up logging
logging.basicConfig(level=log_level())
logger = logging.getLogger(__name__)

app = FastAPI(
    title="TrustSAS Inspection API",
    description="Read-only view over simulated TrustSAS runs",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

SCENARIO_DIR = PROJECT_ROOT / "config" / "scenarios"

# run name -> "running" | "finished" | "failed: ..."
run_status: Dict[str, str] = {}


# Pydantic models for request/response
class ScenarioRunRequest(BaseModel):
    scenario: str = Field(..., description="scenario name under config/scenarios or a JSON path")
    seed: Optional[int] = Field(None, ge=0)
    debug_invariants: bool = False
    run_name: Optional[str] = None


class ScenarioRunResponse(BaseModel):
    run: str
    status: str


class RunSummary(BaseModel):
    run: str
    status: str
    chains: List[str] = []
    tables: List[str] = []


def runs_root() -> Path:
    return default_out_dir()


def _run_dir(run: str) -> Path:
    root = runs_root().resolve()
    path = (root / run).resolve()
    if path.parent != root or not path.is_dir():
        raise HTTPException(status_code=404, detail=f"Run '{run}' not found")
    return path


def _child(directory: Path, name: str, suffix: str) -> Path:
    path = (directory / f"{name}{suffix}").resolve()
    if path.parent != directory.resolve() or not path.is_file():
        raise HTTPException(status_code=404, detail=f"'{name}' not found")
    return path


def _summary(path: Path) -> RunSummary:
    status = run_status.get(path.name, "finished" if (path / "metrics.json").exists() else "incomplete")
    return RunSummary(
        run=path.name,
        status=status,
        chains=sorted(p.stem for p in (path / "chains").glob("*.jsonl")),
        tables=sorted(p.stem for p in (path / "tables").glob("*.csv")),
    )


def _scenario_path(scenario: str) -> Path:
    candidate = Path(scenario)
    if candidate.suffix == ".json" and candidate.is_file():
        return candidate
    path = (SCENARIO_DIR / f"{scenario}.json").resolve()
    if path.parent != SCENARIO_DIR.resolve() or not path.is_file():
        raise HTTPException(status_code=404, detail=f"Scenario '{scenario}' not found")
    return path


def _execute(run: str, config_path: Path, seed: Optional[int], debug_invariants: bool) -> None:
    try:
        config = load_config(str(config_path), seed=seed, debug_invariants=debug_invariants or None)
        report = run_scenario(config, runs_root() / run)
        run_status[run] = "finished" if report.invariant_violations == 0 else "violations"
        logger.info(f"run {run} finished: trace {report.trace_hash[:16]}")
    except TrustSASError as e:
        run_status[run] = f"failed: {e}"
        logger.error(f"run {run} failed: {e}")


@app.get("/api/health")
async def health():
    return {"status": "ok", "runs_dir": str(runs_root())}


@app.get("/api/runs", response_model=List[RunSummary])
async def list_runs():
    root = runs_root()
    if not root.is_dir():
        return []
    return [_summary(p) for p in sorted(root.iterdir()) if p.is_dir()]


@app.get("/api/runs/{run}/metrics")
async def get_metrics(run: str):
    path = _child(_run_dir(run), "metrics", ".json")
    try:
        return MetricsReport.load(path).to_dict()
    except ConfigError as e:
        raise HTTPException(status_code=500, detail=str(e))


@app.get("/api/runs/{run}/tables/{table}")
async def get_table(run: str, table: str):
    path = _child(_run_dir(run) / "tables", table, ".csv")
    return {"table": table, "rows": read_table(path)}


@app.get("/api/runs/{run}/chains/{chain}")
async def get_chain(run: str, chain: str):
    """Blocks of one chain dump plus the result of re-verifying it from genesis"""
    chains = _run_dir(run) / "chains"
    path = _child(chains, chain, ".jsonl")
    try:
        context = ChainContext()
        global_path = chains / f"{GLOBAL_CHAIN}.jsonl"
        if chain != GLOBAL_CHAIN and global_path.is_file():
            audit_chain(load_blocks(global_path), context, GLOBAL_CHAIN)
        blocks = load_blocks(path)
        report, _ = audit_chain(blocks, context, chain)
    except TrustSASError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return {"chain": chain, "audit": report.to_dict(), "blocks": [b.to_dict() for b in blocks]}


@app.get("/api/runs/{run}/trace")
async def get_trace(run: str, event: Optional[str] = None, limit: int = 1000):
    path = _child(_run_dir(run), "trace", ".jsonl")
    entries = load_trace(path)
    if event:
        entries = [e for e in entries if e.get("event") == event]
    return {"count": len(entries), "events": entries[:max(0, limit)]}


@app.post("/api/scenarios/run", response_model=ScenarioRunResponse, status_code=202)
async def start_run(request: ScenarioRunRequest, background_tasks: BackgroundTasks):
    config_path = _scenario_path(request.scenario)
    run = request.run_name or f"{config_path.stem}-{request.seed if request.seed is not None else 'default'}"
    if "/" in run or run.startswith("."):
        raise HTTPException(status_code=400, detail=f"Invalid run name '{run}'")
    if run_status.get(run) == "running":
        raise HTTPException(status_code=409, detail=f"Run '{run}' already in progress")
    run_status[run] = "running"
    background_tasks.add_task(_execute, run, config_path, request.seed, request.debug_invariants)
    logger.info(f"scheduled run {run} from {config_path}")
    return ScenarioRunResponse(run=run, status="running")

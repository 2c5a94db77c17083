"""
Scenario configuration.

A scenario is one JSON file under config/scenarios/. It is validated into a
SimConfig tree before any simulation starts; schema violations surface as
ConfigError naming the offending field.
"""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from .errors import ConfigError
from .utilities import load_json_config

logger = logging.getLogger(__name__)

load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parents[2]
DEFAULT_CALIBRATION = PROJECT_ROOT / "config" / "calibration" / "default.json"


class CalibrationTable(BaseModel):
    """Simulated cost, in seconds, charged for each primitive"""
    epid_sign_s: float = 0.135
    epid_verify_s: float = 0.120
    dkg_s: float = 1.05
    dkg_reference_n: int = 1000
    share_gen_s: float = 0.00063
    share_verify_s: float = 0.0023
    reconstruct_s: float = 0.461
    reconstruct_reference_t: int = 500
    group_verify_s: float = 0.0023
    bls_sign_s: float = 0.00063
    bls_verify_s: float = 0.0023
    record_verify_s: float = 0.0023
    pir_query_gen_s: float = 4.86
    pir_process_s: float = 2.66
    pir_reference_q: int = 25
    pir_reference_r: int = 1_000_000
    pir_reference_s: int = 560
    pir_reference_servers: int = 7

    def dkg(self, n: int) -> float:
        return self.dkg_s * n / self.dkg_reference_n

    def reconstruct(self, t: int) -> float:
        return self.reconstruct_s * max(t, 1) / self.reconstruct_reference_t

    def pir_query_gen(self, q: int, r: int, servers: int) -> float:
        ref = self.pir_reference_q * self.pir_reference_r * self.pir_reference_servers
        return self.pir_query_gen_s * q * r * servers / ref

    def pir_process(self, q: int, r: int, s: int) -> float:
        ref = self.pir_reference_q * self.pir_reference_r * self.pir_reference_s
        return self.pir_process_s * q * r * s / ref


class NetworkConfig(BaseModel):
    latency_s: float = Field(0.020, ge=0)
    bandwidth_bps: float = Field(10e6, gt=0)


class GridConfig(BaseModel):
    n: int = Field(32, ge=1)
    channels: int = Field(16, ge=1, le=0xFFFF)
    record_bytes: int = Field(128, ge=83)
    max_concurrent_sus: int = Field(4, ge=1)
    max_tx_power_dbm: float = Field(30.0, gt=0)
    availability: float = Field(0.85, ge=0, le=1)


class PirConfig(BaseModel):
    t: int = Field(2, ge=1)


class ClusterConfig(BaseModel):
    radius: int = Field(1, ge=0)
    tau: int = Field(10, ge=1)
    max_members: Optional[int] = Field(None, ge=1)
    t_epoch_s: float = Field(86400.0, gt=0)
    t_beacon_s: float = Field(10.0, gt=0)
    beacon_duration_s: float = Field(0.1, gt=0)
    control_channel: int = 0
    leader_timeout_factor: float = Field(3.0, gt=0)
    admission_check: bool = True
    renewal_threshold: int = Field(64, ge=1)
    hearing_radius: int = Field(2, ge=0)


class ConsensusConfig(BaseModel):
    fanout: int = Field(8, ge=1)
    gossip_interval_s: float = Field(0.25, gt=0)
    linger_ticks: int = Field(3, ge=0)
    view_timeout_s: float = Field(4.0, gt=0)
    max_views: int = Field(6, ge=1)


class ClusterPopulation(BaseModel):
    """SUs placed uniformly over the square of cells around `center`"""
    center: List[int] = Field(..., min_length=2, max_length=2)
    spread: int = Field(0, ge=0)
    sus: int = Field(..., ge=1)


class PopulationConfig(BaseModel):
    dbs: int = Field(7, ge=1)
    anchors: int = Field(3, ge=0)
    groups: List[ClusterPopulation] = Field(default_factory=list)


class ByzantineConfig(BaseModel):
    validators: Dict[str, Literal["silent", "drop", "duplicate", "alter", "equivocate"]] = Field(default_factory=dict)
    pir_servers: List[int] = Field(default_factory=list)
    revoked_anchors: List[int] = Field(default_factory=list)


class ScriptEvent(BaseModel):
    epoch: int = Field(..., ge=1)
    kind: Literal["join", "leader_crash", "forge_usage", "forge_query", "tamper_availability", "pu_vacate",
                  "revoke_member"]
    cluster: Optional[int] = None
    cell: Optional[List[int]] = None
    channels: List[int] = Field(default_factory=list)
    count: int = Field(1, ge=1)
    revoked: bool = False


class SimConfig(BaseModel):
    name: str = "scenario"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    epochs: int = Field(1, ge=1)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    pir: PirConfig = Field(default_factory=PirConfig)
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    consensus: ConsensusConfig = Field(default_factory=ConsensusConfig)
    population: PopulationConfig = Field(default_factory=PopulationConfig)
    byzantine: ByzantineConfig = Field(default_factory=ByzantineConfig)
    script: List[ScriptEvent] = Field(default_factory=list)
    calibration: CalibrationTable = Field(default_factory=CalibrationTable)
    debug_invariants: bool = False

    @model_validator(mode="after")
    def _consistent(self) -> "SimConfig":
        if self.population.dbs < self.pir.t + 1:
            raise ValueError(f"pir.t={self.pir.t} needs at least {self.pir.t + 1} DBs, got {self.population.dbs}")
        if self.population.dbs >= 256:
            raise ValueError("at most 255 DB replicas fit GF(2^8) evaluation points")
        if self.population.dbs - len(self.byzantine.pir_servers) < self.pir.t + 1:
            raise ValueError("too many Byzantine PIR servers to reconstruct records")
        for group in self.population.groups:
            if any(not 0 <= c < self.grid.n for c in group.center):
                raise ValueError(f"group center {group.center} outside a {self.grid.n}x{self.grid.n} grid")
        for event in self.script:
            if event.epoch > self.epochs:
                raise ValueError(f"script event {event.kind} at epoch {event.epoch} beyond {self.epochs} epochs")
            if event.kind == "pu_vacate" and (event.cell is None or not event.channels):
                raise ValueError("pu_vacate needs a cell and channels")
        return self


def _format_errors(e: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors())


def load_calibration(path: Optional[str] = None) -> CalibrationTable:
    """Calibration from `path`, TRUSTSAS_CALIBRATION, or the bundled default"""
    path = path or os.getenv("TRUSTSAS_CALIBRATION") or str(DEFAULT_CALIBRATION)
    if not Path(path).exists():
        logger.warning(f"calibration table {path} not found, using built-in defaults")
        return CalibrationTable()
    try:
        return CalibrationTable.model_validate(load_json_config(path))
    except (ValidationError, ValueError) as e:
        detail = _format_errors(e) if isinstance(e, ValidationError) else str(e)
        raise ConfigError(f"invalid calibration table {path}: {detail}") from e


def build_config(data: dict, seed: Optional[int] = None, debug_invariants: Optional[bool] = None) -> SimConfig:
    """
    Raises:
        ConfigError: schema violation, with the field path
    """
    data = dict(data)
    if "calibration" not in data:
        data["calibration"] = load_calibration().model_dump()
    if seed is not None:
        data["seed"] = seed
    if debug_invariants is not None:
        data["debug_invariants"] = debug_invariants
    try:
        return SimConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid scenario config: {_format_errors(e)}") from e


def load_config(path: str, seed: Optional[int] = None, debug_invariants: Optional[bool] = None) -> SimConfig:
    try:
        data = load_json_config(path)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return build_config(data, seed, debug_invariants)


def default_out_dir() -> Path:
    return Path(os.getenv("TRUSTSAS_OUT_DIR", "runs"))


def log_level() -> int:
    return getattr(logging, os.getenv("TRUSTSAS_LOG_LEVEL", "INFO").upper(), logging.INFO)

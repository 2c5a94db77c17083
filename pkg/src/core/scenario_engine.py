"""
Scenario Engine - Main orchestrator for one simulated TrustSAS deployment
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Generator, List, Optional, Set

from .config import ScriptEvent, SimConfig
from .errors import InvariantViolation
from .event_handler import ProtocolEvents
from .metrics import MetricsReport, emit_tables, write_metrics_csv
from src.ledger.chain import ChainContext, audit_chain
from src.protocol.bootstrap import bootstrap, peer_and_cluster, peer_with_dbs, register_su
from src.protocol.membership import join_cluster, rekey_pending, renew_group, revoke_member
from src.protocol.spectrum_query import private_spectrum_query
from src.protocol.system import GLOBAL_CHAIN, TrustSasSystem
from src.protocol.usage import spectrum_usage_notification

logger = logging.getLogger(__name__)


class ScenarioEngine:
    """Runs bootstrapping and then every scripted epoch of a scenario on the simulator"""

    def __init__(self, config: SimConfig):
        self.config = config
        self.system: Optional[TrustSasSystem] = None
        self.script: Dict[int, List[ScriptEvent]] = defaultdict(list)
        self.audits: List[dict] = []
        self.is_initialized = False
        self.finished = False
        logger.info(f"Scenario Engine created for '{config.name}' (seed {config.seed})")

    def initialize(self) -> bool:
        """Build the simulated system and index the scenario script"""
        try:
            logger.info("Initializing Scenario Engine...")
            self.system = TrustSasSystem(self.config)
            for event in self.config.script:
                self.script[event.epoch].append(event)
            self._setup_event_handlers()
            self.is_initialized = True
            logger.info(f"Scenario Engine initialized: {self.config.population.dbs} DBs, "
                        f"{sum(g.sus for g in self.config.population.groups)} SUs, {self.config.epochs} epochs")
            return True
        except Exception as e:
            logger.error(f"Failed to initialize Scenario Engine: {e}")
            return False

    def _setup_event_handlers(self) -> None:
        events = self.system.events
        events.subscribe(ProtocolEvents.LEADER_REVOKED, self._on_leader_revoked)
        events.subscribe(ProtocolEvents.CONSENSUS_ABORTED, self._on_consensus_aborted)
        logger.info("Event handlers configured")

    def _on_leader_revoked(self, event) -> None:
        logger.info(f"cluster {event.detail.get('cluster')}: leader revoked, beacon {event.detail.get('beacon')} "
                    f"removed at t={event.sim_time:.3f}")

    def _on_consensus_aborted(self, event) -> None:
        logger.info(f"consensus on {event.detail.get('chain')} aborted at height {event.detail.get('height')}")

    # simulation

    def run(self) -> MetricsReport:
        """
        Run the whole scenario.

        Raises:
            InvariantViolation: replicas diverge, an assignment breaks a cap,
                or a chain fails its audit in debug mode
            PrivacyViolation: a true SU identity reaches a DB-side event
        """
        if not self.is_initialized and not self.initialize():
            raise RuntimeError("Scenario Engine failed to initialize")
        system = self.system
        process = system.sim.process(self._scenario(), name="scenario")
        system.sim.run_until(process)
        self.finished = True
        logger.info(f"scenario '{self.config.name}' finished at t={system.sim.now:.3f}s, "
                    f"{len(system.operations)} operations, {len(system.consensus_runs)} consensus runs")
        return system.report()

    def _scenario(self) -> Generator:
        system = self.system
        yield from bootstrap(system)
        yield from peer_and_cluster(system)
        yield from peer_with_dbs(system)
        for epoch in range(1, self.config.epochs + 1):
            yield from self._epoch(epoch)

    def _epoch(self, epoch: int) -> Generator:
        system = self.system
        start = system.state.clock.epoch_start(epoch)
        if system.sim.now < start:
            yield system.sim.timeout(start - system.sim.now)
        system.state.start_epoch(epoch, system.sim.now)
        flags = yield from self._apply_script(epoch)

        for cid in sorted(system.state.clusters):
            cluster = system.state.clusters[cid]
            if not cluster.members or cid not in system.local_chains:
                continue
            assignment = yield from private_spectrum_query(
                system, cluster, forge=cid in flags["forge_query"], tamper=cid in flags["tamper_availability"])
            if assignment is None:
                continue
            yield from spectrum_usage_notification(system, cluster, assignment, forge=cid in flags["forge_usage"])
        system.check_replicas()

        for cid in sorted(system.state.clusters):
            cluster = system.state.clusters[cid]
            if cluster.pending_joins:
                yield from rekey_pending(system, cluster)
        yield from renew_group(system)
        if self.config.debug_invariants:
            self.audit()

    def _apply_script(self, epoch: int) -> Generator:
        """
        Apply this epoch's scripted events.

        Returns:
            cluster ids flagged per misbehaviour kind
        """
        system = self.system
        flags: Dict[str, Set[int]] = defaultdict(set)
        for event in self.script.get(epoch, []):
            cluster = system.state.clusters.get(event.cluster) if event.cluster is not None else None
            if event.kind in ("forge_query", "forge_usage", "tamper_availability"):
                flags[event.kind].add(event.cluster)
            elif event.kind == "leader_crash" and cluster is not None:
                leader = system.sus[cluster.leader]
                system.network.crash(leader.pseudonym)
                system.network.crash(leader.validator_id)
                logger.info(f"epoch {epoch}: leader of cluster {cluster.cluster_id} crashed")
            elif event.kind == "pu_vacate":
                cell = system.grid.cell_id(*event.cell)
                for db in system.dbs:
                    db.replica.vacate(cell, event.channels, epoch, system.record_signer)
                system.emit(ProtocolEvents.PU_VACATED, "fcc",
                            {"cell": cell, "channels": list(event.channels), "epoch": epoch}, "fcc")
            elif event.kind == "revoke_member" and cluster is not None:
                members = [p for p in cluster.sorted_members() if p != cluster.leader]
                if members:
                    yield from revoke_member(system, cluster, members[-1])
            elif event.kind == "join":
                yield from self._join(event)
        return flags

    def _join(self, event: ScriptEvent) -> Generator:
        system = self.system
        row, col = event.cell if event.cell is not None else (0, 0)
        cell = system.grid.cell_id(row, col)
        for _ in range(event.count):
            identity = f"su-{system.fcc.registrations}"
            su = register_su(system, identity, cell, system.fcc.anchors)
            if event.revoked:
                yield from system.revoke_on_chain(system.fcc.issuer_revocation(identity), "issuer revocation")
            system.emit(ProtocolEvents.SU_REGISTERED, su.pseudonym,
                        {"registration": system.fcc.registrations - 1, "anchors": len(system.fcc.anchors)}, "fcc")
            yield from join_cluster(system, su)

    # outputs

    def audit(self) -> List[dict]:
        """
        Re-verify every chain from genesis.

        Raises:
            InvariantViolation: a chain fails its audit
        """
        system = self.system
        context = ChainContext()
        report, _ = audit_chain(system.global_chain.blocks, context, GLOBAL_CHAIN)
        reports = [report]
        for cid, chain in sorted(system.local_chains.items()):
            local, _ = audit_chain(chain.blocks, context, chain.name)
            reports.append(local)
        self.audits = [r.to_dict() for r in reports]
        failed = [r for r in reports if not r.ok]
        if failed:
            raise InvariantViolation(f"chain audit failed: {failed[0].chain}: {failed[0].errors}")
        return self.audits

    def write_outputs(self, out_dir: Path, report: Optional[MetricsReport] = None) -> Path:
        """trace.jsonl, chains/*.jsonl, metrics.json, metrics.csv and tables/*.csv"""
        system = self.system
        report = report or system.report()
        out_dir = Path(out_dir)
        chains_dir = out_dir / "chains"
        chains_dir.mkdir(parents=True, exist_ok=True)
        system.protocol_logger.dump_trace(out_dir / "trace.jsonl")
        system.global_chain.dump(chains_dir / f"{GLOBAL_CHAIN}.jsonl")
        for chain in system.local_chains.values():
            chain.dump(chains_dir / f"{chain.name}.jsonl")
        report.save(out_dir / "metrics.json")
        write_metrics_csv(report, out_dir / "metrics.csv")
        emit_tables(report, out_dir / "tables")
        logger.info(f"outputs written to {out_dir}")
        return out_dir


def run_scenario(config: SimConfig, out_dir: Optional[Path] = None) -> MetricsReport:
    """Run a scenario and, when `out_dir` is given, write its outputs there"""
    engine = ScenarioEngine(config)
    report = engine.run()
    if config.debug_invariants:
        report.invariant_violations = sum(1 for a in engine.audit() if not a["ok"])
    if out_dir is not None:
        engine.write_outputs(out_dir, report)
    return report

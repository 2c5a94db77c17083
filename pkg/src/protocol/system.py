"""
The simulated TrustSAS deployment: one simulator, network and CPU model
shared by the FCC, the DB replicas and every SU, plus the chains they keep.

Protocol phases are simulator processes (generators) that take the system
as their first argument.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from typing import Callable, Dict, Generator, Iterable, List, Optional, Sequence, Set

from ..core.config import SimConfig, log_level
from ..core.errors import InvariantViolation
from ..core.event_handler import EventHandler, ProtocolEvents
from ..core.metrics import MetricsReport, OperationRecord, PrimitiveCharge
from ..core.protocol_logger import ProtocolEventLogger
from ..core.simulator import CpuModel, Event, FaultInjector, LinkModel, Network, Simulator
from ..core.state_manager import StateManager
from ..crypto.bls import BlsKeyPair
from ..crypto.epid import EpidSignature, GroupPublicKey, LinkTagEntry, RevocationList, RevocationTarget, \
    target_to_dict
from ..entities.clusters import ClusterState
from ..entities.nodes import DbNode, FccNode, SuNode
from ..entities.spectrum import DbLayout, Grid
from ..ledger.chain import (
    Block, Chain, ChainContext, Transaction, TxKind, cluster_key_message, revocation_update, sign_transaction,
)
from ..ledger.consensus import ConsensusOutcome, bft_consensus
from ..ledger.contract import AssignmentMap, UsageRules

logger = logging.getLogger(__name__)

GLOBAL_CHAIN = "global"


def local_chain_name(cluster_id: int) -> str:
    return f"local-{cluster_id}"


class TrustSasSystem:
    """Everything one scenario run simulates"""

    def __init__(self, config: SimConfig):
        self.config = config
        self.calibration = config.calibration
        self.sim = Simulator(config.seed)
        self.faults = FaultInjector(config.byzantine.validators, seed=config.seed)
        self.network = Network(self.sim, LinkModel(config.network.latency_s, config.network.bandwidth_bps),
                               self.faults)
        self.cpu = CpuModel(self.sim)
        self.events = EventHandler(clock=lambda: self.sim.now)
        self.protocol_logger = ProtocolEventLogger(log_level())
        self.events.subscribe_all(self.protocol_logger)
        self.grid = Grid(config.grid.n)
        self.layout = DbLayout(self.grid, config.grid.channels, config.grid.record_bytes)
        self.rules = UsageRules(config.grid.max_concurrent_sus, config.grid.max_tx_power_dbm,
                                int(config.cluster.t_epoch_s))
        self.state = StateManager(self.events, config.cluster.t_epoch_s, self.grid, config.cluster.hearing_radius)
        self.context = ChainContext()

        self.fcc: Optional[FccNode] = None
        self.record_signer: Optional[BlsKeyPair] = None
        self.dbs: List[DbNode] = []
        self.sus: Dict[str, SuNode] = {}
        self.global_chain: Optional[Chain] = None
        self.local_chains: Dict[int, Chain] = {}
        # revocations decided before the global chain exists
        self.pending_revocations: List[RevocationTarget] = []
        self._early_revocations = RevocationList()
        self.peers: Dict[str, Set[str]] = defaultdict(set)
        self.assignments: Dict[tuple, AssignmentMap] = {}
        self.operations: List[OperationRecord] = []
        self.consensus_runs: List[ConsensusOutcome] = []
        self.consensus_records: List[dict] = []
        self.primitives: Dict[str, PrimitiveCharge] = {}
        self.pir_batches: List[dict] = []
        # (cluster id, epoch) -> availability records the leader retrieved
        self.availability: Dict[tuple, list] = {}
        self._instances = 0

    # identity and keys

    def rng(self, name: str):
        return self.sim.node_rng(name)

    @property
    def kpk(self) -> GroupPublicKey:
        return self.fcc.kpk

    @property
    def group_id(self) -> str:
        return self.kpk.group_id.hex()

    @property
    def revocations(self) -> RevocationList:
        if self.global_chain is not None:
            return self.global_chain.state.revocations
        return self._early_revocations

    def revoke_early(self, target: RevocationTarget) -> RevocationList:
        """Revocation decided before the global chain exists; committed once it does"""
        from ..crypto.epid import revoke
        self._early_revocations = revoke(self._early_revocations, target)
        self.pending_revocations.append(target)
        self.context.revocations[(self.group_id, self._early_revocations.version)] = self._early_revocations
        return self._early_revocations

    def db(self, cluster_id: int) -> DbNode:
        """DB that serves as a cluster's contact point"""
        return self.dbs[cluster_id % len(self.dbs)]

    @property
    def db_names(self) -> List[str]:
        return [db.name for db in self.dbs]

    def alive(self, node: str) -> bool:
        return node not in self.network.crashed

    def live_members(self, cluster: ClusterState) -> List[str]:
        return [p for p in cluster.sorted_members() if self.alive(p) and not self.sus[p].revoked]

    def keyed_members(self, cluster: ClusterState) -> List[str]:
        """Live members holding a share of the cluster's current key"""
        return [p for p in self.live_members(cluster)
                if self.sus[p].keys is not None and p in cluster.indices
                and self.sus[p].keys.y == cluster.y]

    # events and accounting

    def emit(self, event_type: str, node: str, detail: Optional[dict] = None, side: str = "su"):
        return self.events.emit(event_type, node, detail, side)

    def record_operation(self, operation: str, cluster_id: int, started_at: float,
                         components: Optional[Dict[str, float]] = None, status: str = "ok") -> OperationRecord:
        record = OperationRecord(operation, cluster_id, self.state.epoch, started_at, self.sim.now,
                                 dict(components or {}), status)
        self.operations.append(record)
        return record

    def _tally(self, primitive: Optional[str], seconds: float, count: int) -> None:
        if primitive is None or count <= 0:
            return
        charge = self.primitives.setdefault(primitive, PrimitiveCharge())
        charge.count += count
        charge.seconds += seconds

    def work(self, node: str, seconds: float, primitive: Optional[str] = None, count: int = 1) -> Event:
        """CPU time on `node`; `primitive` tallies `count` calls costing `seconds` in total"""
        self._tally(primitive, seconds, count)
        return self.cpu.work(node, seconds)

    def all_work(self, nodes: Iterable[str], seconds: float, primitive: Optional[str] = None) -> Event:
        """The same work on every node, in parallel"""
        events = []
        for n in nodes:
            self._tally(primitive, seconds, 1)
            events.append(self.cpu.work(n, seconds))
        return self.sim.all_of(events)

    def transfer(self, src: str, dst: str, kind: str, size: int) -> Generator:
        """Send one message and wait for its delivery; False when it never arrives"""
        at = self.network.send(src, dst, kind, None, size)
        if at is None or not self.alive(dst):
            return False
        yield self.sim.timeout(at - self.sim.now)
        return True

    def scatter(self, src: str, dsts: Sequence[str], kind: str, size: int) -> Generator:
        """Send to many; returns the recipients reached"""
        arrivals = {}
        for dst in dsts:
            at = self.network.send(src, dst, kind, None, size)
            if at is not None and self.alive(dst):
                arrivals[dst] = at
        if arrivals:
            yield self.sim.timeout(max(arrivals.values()) - self.sim.now)
        return [d for d in dsts if d in arrivals]

    def gather(self, srcs: Sequence[str], dst: str, kind: str, size: int) -> Generator:
        """Many senders to one recipient; returns the senders heard from"""
        if not self.alive(dst):
            return []
        arrivals = {}
        for src in srcs:
            at = self.network.send(src, dst, kind, None, size)
            if at is not None:
                arrivals[src] = at
        if arrivals:
            yield self.sim.timeout(max(arrivals.values()) - self.sim.now)
        return [s for s in srcs if s in arrivals]

    def all_to_all(self, nodes: Sequence[str], kind: str, size: int) -> Generator:
        latest = self.sim.now
        for src in nodes:
            for dst in nodes:
                if src != dst:
                    at = self.network.send(src, dst, kind, None, size)
                    if at is not None:
                        latest = max(latest, at)
        yield self.sim.timeout(latest - self.sim.now)

    # chains

    def chain_secrets(self, chain: Chain) -> Dict[str, int]:
        """Vote keys of the validators that can still sign for `chain`"""
        validators = chain.next_validators
        if chain.name == GLOBAL_CHAIN:
            secrets = {db.name: db.key.secret for db in self.dbs if db.name in validators}
            for su in self.sus.values():
                if su.validator is not None and su.validator_id in validators and self.alive(su.pseudonym):
                    secrets[su.validator_id] = su.validator.secret
            return secrets
        return {p: self.sus[p].keys.x_j for p in validators.keys
                if p in self.sus and self.sus[p].keys is not None and self.alive(p)
                and self.sus[p].keys.z_j.hex() == validators.keys[p]}

    def draft_block(self, chain: Chain, transactions: Sequence[Transaction], proposer: str) -> Block:
        """A proposal built without replaying it; what a faulty proposer sends"""
        return Block(chain.height + 1, chain.head.block_hash, tuple(transactions), proposer, self.sim.now,
                     chain.state.root())

    def commit(self, chain: Chain, block: Block, validate_cost: float = 0.0,
               validate: Optional[Callable[[Block], Optional[str]]] = None,
               secrets: Optional[Dict[str, int]] = None,
               reproposal: Optional[Callable[[str], Optional[Block]]] = None,
               append: bool = True) -> Generator:
        """
        Agree on `block` among the chain's validators.

        Args:
            append: append the decided block; False leaves that to the caller

        Returns:
            the ConsensusOutcome
        """
        self._instances += 1
        name = f"{chain.name}@{block.height}#{self._instances}"
        outcome = yield from bft_consensus(
            self.sim, self.network, self.cpu, chain.next_validators, block, self.config.consensus,
            self.calibration, validate=validate or chain.validate_proposal, validate_cost=lambda b: validate_cost,
            reproposal=reproposal, secrets=secrets if secrets is not None else self.chain_secrets(chain),
            name=name,
        )
        self.consensus_runs.append(outcome)
        side = "db" if chain.name == GLOBAL_CHAIN else "su"
        self.consensus_records.append({**outcome.to_dict(), "chain": "global" if side == "db" else "local",
                                       "validators": chain.next_validators.n})
        if outcome.committed:
            if append:
                chain.append_block(outcome.block)
            self.emit(ProtocolEvents.CONSENSUS_COMMITTED, block.proposer, {
                "chain": chain.name, "height": outcome.block.height, "views": outcome.views,
                "messages": outcome.messages, "bytes": outcome.bytes, "duration": outcome.duration,
            }, side)
        else:
            self.emit(ProtocolEvents.CONSENSUS_ABORTED, block.proposer, {
                "chain": chain.name, "height": block.height, "views": outcome.views,
                "messages": outcome.messages,
            }, side)
        return outcome

    def revoke_on_chain(self, target: RevocationTarget, reason: str, author: Optional[DbNode] = None,
                        beacon_id: Optional[str] = None, validator: Optional[str] = None) -> Generator:
        """
        Commit a DB-signed Revocation on the global chain.

        Returns:
            True when committed
        """
        author = author or self.dbs[0]
        chain = self.global_chain
        payload = {"target": target_to_dict(target), "reason": reason}
        if beacon_id:
            payload["beacon_id"] = beacon_id
        if validator:
            payload["validator"] = validator
        tx = sign_transaction(TxKind.REVOCATION, payload, author.name, author.key.secret)
        timestamp = self.sim.now
        block = chain.propose([tx], author.name, timestamp)
        outcome = yield from self.commit(chain, block, self.calibration.bls_verify_s, append=False)
        if not outcome.committed:
            logger.warning(f"revocation ({reason}) aborted")
            return False

        def certify(proposal: Block):
            return outcome.commit_proof if proposal.block_hash == outcome.block.block_hash else None

        revocation_update(chain, tx, certify, timestamp)
        self.invalidate_sessions()
        return True

    def invalidate_sessions(self) -> None:
        """A new revocation list version ends every cached EPID session"""
        for db in self.dbs:
            db.reset_sessions()

    def leader_link_entry(self, cluster_id: int, validator: str) -> Optional[LinkTagEntry]:
        """L2 entry for the EPID signature a leader put on its cluster key"""
        for _, tx in reversed(self.global_chain.transactions(TxKind.CLUSTER_PUBKEY)):
            p = tx.payload
            if int(p["cluster_id"]) == cluster_id and p["leader_validator"] == validator:
                sig = EpidSignature.decode(bytes.fromhex(p["epid_signature"]))
                return sig.revocation_entry(cluster_key_message(p))
        return None

    def member_link_entry(self, cluster_id: int, pseudonym: str) -> Optional[LinkTagEntry]:
        """L2 entry for the EPID signature on a member's latest key binding"""
        chain = self.local_chains.get(cluster_id)
        if chain is None:
            return None
        for _, tx in reversed(chain.transactions(TxKind.KEY_BINDING)):
            if tx.payload["pseudonym"] == pseudonym:
                sig = EpidSignature.decode(bytes.fromhex(tx.signature))
                return sig.revocation_entry(tx.signing_bytes())
        return None

    def check_replicas(self) -> bool:
        digests = {db.replica.digest() for db in self.dbs}
        consistent = len(digests) == 1
        self.emit(ProtocolEvents.REPLICAS_CHECKED, self.dbs[0].name, {
            "replicas": len(self.dbs), "consistent": consistent, "digest": sorted(digests)[0][:16],
        }, "db")
        if not consistent:
            raise InvariantViolation(f"DB replicas diverged: {len(digests)} distinct digests")
        return consistent

    def report(self) -> MetricsReport:
        stats = self.network.stats
        return MetricsReport(
            scenario=self.config.name,
            seed=self.config.seed,
            trace_hash=self.protocol_logger.trace_hash(),
            sim_time=self.sim.now,
            operations=list(self.operations),
            consensus=list(self.consensus_records),
            traffic={"messages": stats.messages, "bytes": stats.bytes, "dropped": stats.dropped,
                     "per_kind": dict(sorted(stats.per_kind.items())),
                     "bytes_per_kind": dict(sorted(stats.bytes_per_kind.items()))},
            pir=list(self.pir_batches),
            primitives=dict(self.primitives),
            parameters={"dbs": len(self.dbs), "tau": self.config.cluster.tau, "pir_t": self.config.pir.t,
                        "r": self.layout.r, "s": self.layout.b, "clusters": len(self.state.clusters),
                        "sus": len(self.sus)},
        )
